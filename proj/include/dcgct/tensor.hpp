#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcgct::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename S>
class Tape;

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const Tape<S>* producer = nullptr;  // null for leaves
};

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

// Dense row-major array with optional gradient. Copies share storage, like a
// handle; use clone() for an independent copy.
template <typename S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;
  Tensor(Shape shape, std::vector<S> data, bool requires_grad = false);
  explicit Tensor(NodePtr<S> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S value, bool requires_grad = false);
  static Tensor scalar(S value) { return Tensor(Shape{1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative axes count from the end.
  std::size_t extent(int axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<const S> data() const { return node_->data; }
  std::span<S> data() { return node_->data; }
  S item() const;
  S at(std::size_t flat_index) const { return node_->data[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Detached deep copy.
  Tensor clone() const;

  const NodePtr<S>& node() const { return node_; }

 private:
  NodePtr<S> node_;
};

// Ordered record of executed primitives. One forward/backward pass at a time.
template <typename S>
class Tape {
 public:
  using Adjoint = std::function<void(const Node<S>& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<NodePtr<S>> inputs, NodePtr<S> output, Adjoint adjoint);

  // Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse order. Leaf
  // gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor<S>& loss);

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<NodePtr<S>> inputs;
    NodePtr<S> output;
    Adjoint adjoint;
  };
  std::vector<Entry> entries_;
};

template <typename S>
inline thread_local Tape<S>* active_tape_ptr = nullptr;

template <typename S>
Tape<S>* active_tape() {
  return active_tape_ptr<S>;
}

// Routes primitives executed on this thread onto `tape` for the guard's lifetime.
template <typename S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& tape) : previous_(active_tape_ptr<S>) { active_tape_ptr<S> = &tape; }
  ~TapeScope() { active_tape_ptr<S> = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* previous_;
};

// Suspends recording for the guard's lifetime.
template <typename S>
class NoTapeScope {
 public:
  NoTapeScope() : previous_(active_tape_ptr<S>) { active_tape_ptr<S> = nullptr; }
  ~NoTapeScope() { active_tape_ptr<S> = previous_; }
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape<S>* previous_;
};

// DCGCT_CHECK_FINITE=1 turns on NaN/Inf assertions after every primitive.
bool check_finite_enabled();
void set_check_finite(bool on);

// Debug hook for verifying the gradient checker: scales the matmul adjoint
// with respect to its left operand by 1.1.
bool corrupt_adjoint_enabled();
void set_corrupt_adjoint(bool on);

}  // namespace dcgct::ad
