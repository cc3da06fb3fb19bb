#include "dcgct/tensor.hpp"

#include <atomic>
#include <cstdlib>
#include <sstream>
#include <string_view>

namespace dcgct::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {

std::atomic<int> g_check_finite{-1};
std::atomic<bool> g_corrupt_adjoint{false};

}  // namespace

bool check_finite_enabled() {
  int v = g_check_finite.load(std::memory_order_relaxed);
  if (v < 0) {
    const char* env = std::getenv("DCGCT_CHECK_FINITE");
    v = (env != nullptr && std::string_view(env) == "1") ? 1 : 0;
    g_check_finite.store(v, std::memory_order_relaxed);
  }
  return v == 1;
}

void set_check_finite(bool on) { g_check_finite.store(on ? 1 : 0); }

bool corrupt_adjoint_enabled() { return g_corrupt_adjoint.load(std::memory_order_relaxed); }
void set_corrupt_adjoint(bool on) { g_corrupt_adjoint.store(on); }

template <typename S>
Tensor<S>::Tensor(Shape shape, std::vector<S> data, bool requires_grad) : node_(std::make_shared<Node<S>>()) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<S>(n, value), requires_grad);
}

template <typename S>
std::size_t Tensor<S>::extent(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename S>
S Tensor<S>::item() const {
  if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + to_string(shape()));
  return node_->data[0];
}

template <typename S>
Tensor<S> Tensor<S>::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

template <typename S>
void Tape<S>::record(std::vector<NodePtr<S>> inputs, NodePtr<S> output, Adjoint adjoint) {
  output->producer = this;
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(adjoint)});
}

template <typename S>
void Tape<S>::backward(const Tensor<S>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar tensor");
  }
  if (loss.node()->producer != this) {
    throw std::logic_error("backward: loss was not recorded on this tape");
  }
  for (auto& e : entries_) e.output->grad.assign(e.output->data.size(), S(0));
  loss.node()->grad[0] = S(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->adjoint(*it->output);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace dcgct::ad
