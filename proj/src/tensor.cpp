#include "woundformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "woundformer/errors.hpp"

namespace woundformer {

namespace {

thread_local bool t_grad_enabled = true;
thread_local OpTrace* t_active_trace = nullptr;
std::atomic<std::uint64_t> g_sequence{1};

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<Index>(data.size())) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1);
  node->op = "leaf";
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ArgumentError("use of an undefined tensor");
  return *node;
}

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                          requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor data");
  }
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return checked(node_).shape; }
int Tensor::rank() const { return static_cast<int>(shape().size()); }

Index Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape()));
  }
  return shape()[static_cast<std::size_t>(a)];
}

Index Tensor::size() const { return static_cast<Index>(checked(node_).value.size()); }

std::span<const double> Tensor::data() const { return checked(node_).value; }

std::span<double> Tensor::mutable_data() {
  checked(node_);
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw ShapeError("index rank mismatch for shape " + to_string(s));
  Index flat = 0;
  std::size_t i = 0;
  for (Index v : idx) {
    if (v < 0 || v >= s[i]) throw ShapeError("index out of range for shape " + to_string(s));
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->value[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  checked(node_);
  if (node_->backward) throw ArgumentError("requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::is_leaf() const { return !checked(node_).backward; }
bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  checked(node_);
  return node_->grad_buffer();
}

std::span<double> Tensor::mutable_grad() {
  checked(node_);
  return node_->grad_buffer();
}

void Tensor::zero_grad() {
  checked(node_);
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const std::string& Tensor::op_name() const { return checked(node_).op; }
std::uint64_t Tensor::tape_position() const { return checked(node_).sequence; }

void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() without a seed needs a scalar, got " + to_string(shape()));
  }
  const double one = 1.0;
  backward(std::span<const double>(&one, 1));
}

void Tensor::backward(std::span<const double> seed) const {
  const detail::Node& root = checked(node_);
  if (static_cast<Index>(seed.size()) != size()) throw ShapeError("backward seed size mismatch");
  if (!root.requires_grad) throw ArgumentError("backward() on a tensor that does not require grad");

  // Collect the recorded interior nodes reachable from the root.
  std::vector<detail::Node*> interior;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    if (n->backward) {
      interior.push_back(n);
      for (const auto& in : n->inputs) stack.push_back(in.get());
    }
  }
  // Replay in reverse tape order.
  std::sort(interior.begin(), interior.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->sequence > b->sequence; });
  for (detail::Node* n : interior) n->grad.assign(n->value.size(), 0.0);

  auto& root_grad = node_->grad_buffer();
  for (std::size_t i = 0; i < seed.size(); ++i) root_grad[i] += seed[i];

  for (detail::Node* n : interior) n->backward(*n);
}

Tensor Tensor::detach() const {
  const detail::Node& n = checked(node_);
  return Tensor(make_leaf(n.shape, n.value, false));
}

Tensor Tensor::clone() const {
  const detail::Node& n = checked(node_);
  return Tensor(make_leaf(n.shape, n.value, n.requires_grad && !n.backward));
}

namespace {

template <class Range>
Tensor make_result_impl(std::string_view op, Shape shape, std::vector<double> value, const Range& inputs,
                        detail::BackwardFn backward, double flops) {
  if (numel(shape) != static_cast<Index>(value.size())) {
    throw ShapeError(std::string(op) + ": output length does not match shape " + to_string(shape));
  }
  for (double v : value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
  if (t_active_trace) t_active_trace->record({std::string(op), shape, flops});

  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::string(op);
  node->sequence = g_sequence.fetch_add(1);

  bool any = false;
  if (t_grad_enabled) {
    for (const Tensor& in : inputs) {
      if (in.defined() && in.requires_grad()) any = true;
    }
  }
  if (any) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    for (const Tensor& in : inputs) node->inputs.push_back(in.node());
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace

Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> value,
                      std::initializer_list<Tensor> inputs, detail::BackwardFn backward, double flops) {
  return make_result_impl(op, std::move(shape), std::move(value), inputs, std::move(backward), flops);
}

Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> value,
                      const std::vector<Tensor>& inputs, detail::BackwardFn backward, double flops) {
  return make_result_impl(op, std::move(shape), std::move(value), inputs, std::move(backward), flops);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

OpTrace::OpTrace() : previous_(t_active_trace) { t_active_trace = this; }
OpTrace::~OpTrace() { t_active_trace = previous_; }

double OpTrace::total_flops() const {
  double total = 0.0;
  for (const auto& e : entries_) total += e.flops;
  return total;
}

}  // namespace woundformer
