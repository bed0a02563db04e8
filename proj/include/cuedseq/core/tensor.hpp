#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cuedseq {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tape;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  // Reads this node's grad and accumulates into the inputs it captured.
  std::function<void(const Node&)> backward;
  const Tape* tape = nullptr;
  std::size_t tape_index = 0;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor of doubles.
///
/// A Tensor is a handle: copies share the same storage and gradient. Leaves
/// created with `requires_grad` collect gradients when a loss computed from
/// them under an active Tape is passed to `backward`. Use `clone()` for an
/// independent copy.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}

  Tensor(std::vector<double> data, Shape shape, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) {
      if (d == 0) throw std::invalid_argument("tensor dimension sizes must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return Tensor(std::vector<double>(shape_numel(shape), 0.0), shape, requires_grad);
  }
  static Tensor full(const Shape& shape, double v) {
    return Tensor(std::vector<double>(shape_numel(shape), v), shape);
  }
  static Tensor scalar(double v) { return Tensor({v}, {}); }

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const noexcept { return node_->value.size(); }
  bool empty() const noexcept { return node_->value.empty(); }

  std::span<const double> data() const noexcept { return node_->value; }
  /// Writable view of the values. Mutating a tensor that is part of a
  /// recorded graph invalidates that graph's gradients.
  std::span<double> mutable_data() noexcept { return node_->value; }
  const std::vector<double>& values() const noexcept { return node_->value; }

  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t i) const { return node_->value.at(i); }

  double item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool on) noexcept { node_->requires_grad = on; }

  bool has_grad() const noexcept { return !node_->grad.empty(); }
  /// Accumulated gradient, or an empty span if nothing has flowed in yet.
  std::span<const double> grad() const noexcept { return node_->grad; }
  void zero_grad() noexcept { node_->grad.clear(); }

  /// Independent copy of the values; not connected to any graph.
  Tensor clone() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }
  /// Shares nothing with the graph; same values, no grad.
  Tensor detach() const { return Tensor(node_->value, node_->shape); }

  /// True when both handles point at the same storage.
  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

  detail::Node& node() const noexcept { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of differentiable operations.
///
/// Operations record themselves on the calling thread's active tape (see
/// `record()`). A tape supports exactly one `backward` pass; afterwards it is
/// consumed and releases the graph.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Recording {
   public:
    explicit Recording(Tape* tape) : prev_(active_slot()) { active_slot() = tape; }
    ~Recording() { active_slot() = prev_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* prev_;
  };

  /// Makes this tape the active one on the current thread until the returned
  /// guard is destroyed.
  [[nodiscard]] Recording record() {
    if (consumed_) throw std::logic_error("cannot record on a consumed tape");
    return Recording(this);
  }

  static Tape* active() noexcept { return active_slot(); }

  /// Stops recording on the current thread until the guard is destroyed.
  [[nodiscard]] static Recording suspend() { return Recording(nullptr); }

  void push(const std::shared_ptr<detail::Node>& node) {
    if (consumed_) throw std::logic_error("cannot record on a consumed tape");
    node->tape = this;
    node->tape_index = records_.size();
    records_.push_back(node);
  }

  std::size_t size() const noexcept { return records_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  friend void backward(const Tensor& loss, Tape& tape);

  static Tape*& active_slot() noexcept {
    thread_local Tape* slot = nullptr;
    return slot;
  }

  std::vector<std::shared_ptr<detail::Node>> records_;
  bool consumed_ = false;
};

/// Reverse accumulation from a scalar loss. Leaf gradients accumulate into
/// whatever they already hold; call `zero_grad` between steps.
inline void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (tape.consumed_) throw std::logic_error("backward called on a consumed tape");
  auto& root = loss.node();
  if (root.tape != &tape || root.tape_index >= tape.records_.size() ||
      tape.records_[root.tape_index].get() != &root) {
    throw std::invalid_argument("loss was not recorded on this tape");
  }
  root.grad_buffer()[0] += 1.0;
  for (std::size_t i = root.tape_index + 1; i-- > 0;) {
    auto& node = *tape.records_[i];
    if (!node.grad.empty() && node.backward) node.backward(node);
    node.backward = nullptr;
  }
  tape.consumed_ = true;
  tape.records_.clear();
  tape.records_.shrink_to_fit();
}

}  // namespace cuedseq
