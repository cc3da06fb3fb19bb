#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "dcgct/tensor.hpp"

// Differentiable primitives. Each records its adjoint on the active tape when
// any input requires a gradient.
namespace dcgct::ad {

enum class Mode { train, eval };

// [.., m, k] x [.., k, n] -> [.., m, n]. Batch dims must match, or one side
// may be a plain matrix broadcast across the other's batch.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

// Elementwise; `b` may also be a trailing-suffix shape broadcast over `a`.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor);

// Sum of every element -> shape {1}.
template <typename S>
Tensor<S> sum(const Tensor<S>& x);
template <typename S>
Tensor<S> mean(const Tensor<S>& x);

// Reduces the trailing axis: [.., n] -> [..].
template <typename S>
Tensor<S> sum_last(const Tensor<S>& x);

// Elementwise square root; the adjoint at exactly zero is taken as zero.
template <typename S>
Tensor<S> sqrt(const Tensor<S>& x);

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x);

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5));

template <typename S>
struct RunningStats {
  std::vector<S> mean;
  std::vector<S> var;
  bool ready = false;
  double momentum = 0.1;
};

// Per-channel normalization over every leading position (batch x joints).
// Train mode normalizes with the population variance of the batch and folds
// the batch statistics into `stats` (the first batch initializes them).
template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, RunningStats<S>& stats,
                     Mode mode, S eps = S(1e-5));

// x * Phi(x) with the exact Gaussian CDF.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x);

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, std::mt19937_64& rng);

template <typename S>
Tensor<S> concat_channels(std::span<const Tensor<S>> xs);
template <typename S>
Tensor<S> concat_channels(std::initializer_list<Tensor<S>> xs) {
  std::vector<Tensor<S>> v(xs);
  return concat_channels(std::span<const Tensor<S>>(v));
}

template <typename S>
std::vector<Tensor<S>> split_channels(const Tensor<S>& x, std::span<const std::size_t> sizes);
template <typename S>
std::vector<Tensor<S>> split_channels(const Tensor<S>& x, std::initializer_list<std::size_t> sizes) {
  std::vector<std::size_t> v(sizes);
  return split_channels(x, std::span<const std::size_t>(v));
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape);

template <typename S>
Tensor<S> swap_axes(const Tensor<S>& x, int axis_a, int axis_b);

template <typename S>
Tensor<S> transpose_last(const Tensor<S>& x) {
  return swap_axes(x, -2, -1);
}

}  // namespace dcgct::ad
