#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>
#include <stdexcept>

#include "dcgct/tensor.hpp"

namespace dcgct::ad {

struct GradCheckResult {
  double max_error = 0.0;  // relative, or absolute where both sides are below 1e-8
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

class NondeterministicFunction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double gradient_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < 1e-8 ? diff : diff / scale;
}

// Compares the recorded adjoint of scalar `f` at `x` against central
// differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every coordinate.
// `f` maps a Tensor<double> to a one-element Tensor<double>.
template <typename F>
GradCheckResult grad_check(F&& f, Tensor<double> x, double eps = 1e-5) {
  const auto evaluate = [&] {
    NoTapeScope<double> off;
    return f(x).item();
  };
  const double first = evaluate();
  if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(evaluate())) {
    throw NondeterministicFunction("grad_check: repeated evaluation of f disagreed");
  }

  x.zero_grad();
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> y = f(x);
    tape.backward(y);
  }
  std::vector<double> analytic(x.size(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  GradCheckResult result;
  auto values = x.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = evaluate();
    values[i] = saved - eps;
    const double down = evaluate();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = gradient_error(analytic[i], numeric);
    if (i == 0 || err > result.max_error) result = GradCheckResult{err, i, analytic[i], numeric};
  }
  return result;
}

}  // namespace dcgct::ad
