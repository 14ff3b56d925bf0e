#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace woundformer {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& out)>;

// One recorded value. Interior nodes carry the backward rule of the op that
// produced them; leaves have none. `sequence` is the tape position: inputs
// always have a smaller sequence than the op that consumed them.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  // Allocates (zeroed) on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with an optional place on the gradient
/// tape. Copies share storage; use `clone()` or `detach()` for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const;
  int rank() const;
  /// Extent of axis `axis`; negative counts from the back.
  Index dim(int axis) const;
  Index size() const;

  std::span<const double> data() const;
  /// In-place access. Meant for leaves (parameters, buffers, inputs); writing
  /// into an interior node invalidates its recorded backward rule.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<Index> idx) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  const std::string& op_name() const;
  std::uint64_t tape_position() const;

  /// Reverse-mode sweep from a scalar. Leaves accumulate additively; interior
  /// gradients are recomputed from zero on every call.
  void backward() const;
  void backward(std::span<const double> seed) const;

  /// Same values, no tape history, no grad.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

/// Records `value` as the output of `op`. When grad mode is on and any input
/// requires grad, the node joins the tape with `backward`. Throws NumericError
/// if any value is non-finite. `flops` feeds the active OpTrace.
Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> value,
                      std::initializer_list<Tensor> inputs, detail::BackwardFn backward,
                      double flops = 0.0);
Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> value,
                      const std::vector<Tensor>& inputs, detail::BackwardFn backward,
                      double flops = 0.0);

bool grad_enabled();

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

struct TraceEntry {
  std::string op;
  Shape output_shape;
  double flops = 0.0;
};

/// Collects every op executed on this thread while alive. Nested traces
/// shadow the outer one.
class OpTrace {
 public:
  OpTrace();
  ~OpTrace();
  OpTrace(const OpTrace&) = delete;
  OpTrace& operator=(const OpTrace&) = delete;

  const std::vector<TraceEntry>& entries() const { return entries_; }
  double total_flops() const;
  void record(TraceEntry entry) { entries_.push_back(std::move(entry)); }

 private:
  OpTrace* previous_;
  std::vector<TraceEntry> entries_;
};

}  // namespace woundformer
