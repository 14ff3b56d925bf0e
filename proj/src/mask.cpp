#include "woundformer/mask.hpp"

#include <algorithm>

#include "woundformer/errors.hpp"

namespace woundformer {

IntMask IntMask::zeros(Shape shape) {
  const Index n = numel(shape);
  return {std::move(shape), std::vector<int>(static_cast<std::size_t>(n), 0)};
}

IntMask IntMask::from_values(Shape shape, std::vector<int> values) {
  if (shape.size() < 2) throw ShapeError("mask needs at least two axes");
  if (numel(shape) != static_cast<Index>(values.size())) {
    throw ShapeError("mask data length does not match shape " + to_string(shape));
  }
  return {std::move(shape), std::move(values)};
}

IntMask stack_masks(std::span<const IntMask> masks) {
  if (masks.empty()) throw ArgumentError("stack_masks: empty batch");
  const Index h = masks[0].height(), w = masks[0].width();
  IntMask out;
  out.shape = {static_cast<Index>(masks.size()), h, w};
  out.values.reserve(masks.size() * static_cast<std::size_t>(h * w));
  for (const IntMask& m : masks) {
    if (m.shape.size() != 2 || m.height() != h || m.width() != w) {
      throw ShapeError("stack_masks: mask " + to_string(m.shape) + " differs from [" + std::to_string(h) + "," +
                       std::to_string(w) + "]");
    }
    out.values.insert(out.values.end(), m.values.begin(), m.values.end());
  }
  return out;
}

IntMask argmax_channels(const Tensor& scores) {
  if (scores.rank() != 4) throw ShapeError("argmax_channels: expected [N, K, H, W]");
  const Index n = scores.dim(0), k = scores.dim(1), plane = scores.dim(2) * scores.dim(3);
  IntMask out = IntMask::zeros({n, scores.dim(2), scores.dim(3)});
  const auto v = scores.data();
  for (Index b = 0; b < n; ++b) {
    for (Index p = 0; p < plane; ++p) {
      int best = 0;
      double best_v = v[(b * k) * plane + p];
      for (Index c = 1; c < k; ++c) {
        const double s = v[(b * k + c) * plane + p];
        if (s > best_v) {
          best_v = s;
          best = static_cast<int>(c);
        }
      }
      out.values[b * plane + p] = best;
    }
  }
  return out;
}

IntMask batch_item(const IntMask& batch, Index index) {
  if (batch.shape.size() != 3 || index < 0 || index >= batch.shape[0]) {
    throw ShapeError("batch_item: index out of range for " + to_string(batch.shape));
  }
  const Index plane = batch.shape[1] * batch.shape[2];
  IntMask out{{batch.shape[1], batch.shape[2]}, {}};
  out.values.assign(batch.values.begin() + index * plane, batch.values.begin() + (index + 1) * plane);
  return out;
}

}  // namespace woundformer
