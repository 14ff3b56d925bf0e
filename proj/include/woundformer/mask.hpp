#pragma once

#include <span>
#include <vector>

#include "woundformer/tensor.hpp"

namespace woundformer {

/// Integer class map, row-major. Shape is [H, W] for one image or [N, H, W]
/// for a batch.
struct IntMask {
  Shape shape;
  std::vector<int> values;

  static IntMask zeros(Shape shape);
  static IntMask from_values(Shape shape, std::vector<int> values);

  Index height() const { return shape[shape.size() - 2]; }
  Index width() const { return shape.back(); }
  Index size() const { return static_cast<Index>(values.size()); }
  int at(Index y, Index x) const { return values[static_cast<std::size_t>(y * width() + x)]; }
  int& at(Index y, Index x) { return values[static_cast<std::size_t>(y * width() + x)]; }

  bool operator==(const IntMask&) const = default;
};

/// Stack [H, W] masks into [N, H, W].
IntMask stack_masks(std::span<const IntMask> masks);
/// Per-pixel argmax over the channel axis of [N, K, H, W] scores -> [N, H, W].
IntMask argmax_channels(const Tensor& scores);
/// Image `index` of an [N, H, W] batch.
IntMask batch_item(const IntMask& batch, Index index);

}  // namespace woundformer
