#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "dcgct/grad_check.hpp"
#include "dcgct/ops.hpp"
#include "dcgct/tensor.hpp"

using namespace dcgct::ad;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return T(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("tensor construction") {
  CHECK_THROWS_AS(T({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(T({2, 0}, {}), ShapeError);
  const T t = T::full({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.extent(-1) == 3);
  T c = t.clone();
  c.data()[0] = 9.0;
  CHECK(t.at(0) == 1.5);
}

TEST_CASE("matmul values") {
  const T eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const T b = random_tensor({3, 4}, 1);
  const T y = matmul(eye, b);
  for (std::size_t i = 0; i < 12; ++i) CHECK(y.at(i) == b.at(i));

  const T a({2, 2}, {1, 2, 3, 4});
  const T ones({2, 1}, {1, 1});
  const T r = matmul(a, ones);
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r.at(0) == 3.0);
  CHECK(r.at(1) == 7.0);

  CHECK_THROWS_AS(matmul(a, T({3, 1}, {1, 1, 1})), ShapeError);
}

TEST_CASE("matmul gradient against finite differences") {
  const T b = random_tensor({4, 5}, 2);
  const auto r = grad_check([&](const T& x) { return sum(matmul(x, b)); }, random_tensor({3, 4}, 3));
  CHECK(r.max_error < 1e-6);
}

TEST_CASE("corrupted adjoint is detected") {
  const T b = random_tensor({4, 5}, 2);
  set_corrupt_adjoint(true);
  const auto r = grad_check([&](const T& x) { return sum(matmul(x, b)); }, random_tensor({3, 4}, 3));
  set_corrupt_adjoint(false);
  CHECK(r.max_error > 0.05);
}

TEST_CASE("softmax rows") {
  const T u = softmax_rows(T({1, 3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3.0));
  CHECK(softmax_rows(T({1, 1}, {42.0})).at(0) == 1.0);
  const T big = softmax_rows(T({1, 2}, {1000.0, 0.0}));
  CHECK(std::abs(big.at(0) - 1.0) < 1e-12);
  CHECK(std::abs(big.at(1)) < 1e-12);
  const T x = random_tensor({4, 6}, 4);
  T shifted = x.clone();
  for (auto& v : shifted.data()) v += 123.0;
  const T a = softmax_rows(x);
  const T b = softmax_rows(shifted);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
}

TEST_CASE("layer norm") {
  const T gamma = T::full({3}, 1.0);
  const T beta = T::zeros({3});
  const T y = layer_norm(T({1, 3}, {1, 2, 3}), gamma, beta, 1e-12);
  CHECK(y.at(0) == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-9));
  CHECK(std::abs(y.at(1)) < 1e-12);
  CHECK(y.at(2) == doctest::Approx(std::sqrt(1.5)).epsilon(1e-9));

  const T c = layer_norm(T::full({2, 3}, 7.0), gamma, T({3}, {0.5, -1.0, 2.0}));
  CHECK(c.at(0) == 0.5);
  CHECK(c.at(1) == -1.0);
  CHECK(c.at(5) == 2.0);
}

TEST_CASE("gelu") {
  CHECK(gelu(T::scalar(0.0)).item() == 0.0);
  CHECK(gelu(T::scalar(1.0)).item() == doctest::Approx(0.8413447460685429));
  const auto r = grad_check([](const T& x) { return sum(gelu(x)); }, T::scalar(0.0));
  CHECK(r.analytic == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.max_error < 1e-6);
}

TEST_CASE("batch norm modes") {
  const T gamma = T::full({2}, 1.0);
  const T beta = T::zeros({2});
  RunningStats<double> stats;
  const T x({3, 2}, {1, 10, 2, 20, 3, 30});
  CHECK_THROWS(batch_norm(x, gamma, beta, stats, Mode::eval));
  CHECK_THROWS(batch_norm(T({1, 2}, {1, 2}), gamma, beta, stats, Mode::train));
  const T y = batch_norm(x, gamma, beta, stats, Mode::train);
  CHECK(y.at(0) == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-4));
  CHECK(stats.ready);
  CHECK(stats.mean[0] == doctest::Approx(2.0));
  CHECK(stats.var[0] == doctest::Approx(1.0));  // unbiased
  const T e = batch_norm(T({1, 2}, {2, 20}), gamma, beta, stats, Mode::eval);
  CHECK(std::abs(e.at(0)) < 1e-12);
}

TEST_CASE("tape semantics") {
  SUBCASE("backward requires a scalar") {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    T x = random_tensor({2, 2}, 5);
    x.set_requires_grad(true);
    const T y = scale(x, 2.0);
    CHECK_THROWS(tape.backward(y));
  }
  SUBCASE("leaf gradients accumulate across passes") {
    T x = T::full({3}, 1.0, true);
    for (int pass = 0; pass < 2; ++pass) {
      Tape<double> tape;
      TapeScope<double> scope(tape);
      tape.backward(sum(scale(x, 3.0)));
    }
    for (double g : x.grad()) CHECK(g == 6.0);
  }
  SUBCASE("suspended recording") {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    T x = T::full({3}, 1.0, true);
    {
      NoTapeScope<double> off;
      (void)scale(x, 2.0);
    }
    CHECK(tape.size() == 0);
    (void)scale(x, 2.0);
    CHECK(tape.size() == 1);
  }
  SUBCASE("reverse order replay") {
    T x = T::full({2}, 2.0, true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const T y = mul(x, x);        // x^2
    const T z = mul(y, x);        // x^3
    tape.backward(sum(z));
    for (double g : x.grad()) CHECK(g == doctest::Approx(12.0));
  }
}

TEST_CASE("finite check mode") {
  set_check_finite(true);
  CHECK_THROWS_AS(scale(T::full({2}, 1.0), std::numeric_limits<double>::infinity()), NumericalError);
  set_check_finite(false);
  CHECK_NOTHROW(scale(T::full({2}, 1.0), std::numeric_limits<double>::infinity()));
}

TEST_CASE("channel plumbing") {
  const T a = random_tensor({2, 3, 2}, 6);
  const T b = random_tensor({2, 3, 5}, 7);
  const T c = concat_channels({a, b});
  CHECK(c.shape() == Shape{2, 3, 7});
  const auto parts = split_channels(c, {2, 5});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(parts[0].at(i) == a.at(i));
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(parts[1].at(i) == b.at(i));
  CHECK_THROWS_AS(split_channels(c, {2, 4}), ShapeError);
  CHECK_THROWS_AS(concat_channels({a, random_tensor({2, 4, 1}, 8)}), ShapeError);

  const T s = swap_axes(a, 0, 1);
  CHECK(s.shape() == Shape{3, 2, 2});
  CHECK(s.at(1 * 4 + 0 * 2 + 1) == a.at(0 * 6 + 1 * 2 + 1));
  CHECK_THROWS_AS(reshape(a, Shape{5, 2}), ShapeError);
}

TEST_CASE("sqrt adjoint at zero") {
  T x = T::zeros({2}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  tape.backward(sum(dcgct::ad::sqrt(x)));
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("nondeterministic functions are rejected") {
  int calls = 0;
  auto f = [&](const T& x) { return scale(sum(x), static_cast<double>(++calls)); };
  CHECK_THROWS_AS(grad_check(f, T::full({2}, 1.0)), NondeterministicFunction);
}
