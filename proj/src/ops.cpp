#include "dcgct/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace dcgct::ad {

namespace {

template <typename S>
Tape<S>* recording_tape(std::initializer_list<const Tensor<S>*> inputs) {
  Tape<S>* tape = active_tape<S>();
  if (tape == nullptr) return nullptr;
  for (const Tensor<S>* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename S>
S* grad_of(Node<S>& n) {
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.data.size(), S(0));
  return n.grad.data();
}

template <typename S>
void check_finite(const char* op, const std::vector<S>& values) {
  if (!check_finite_enabled()) return;
  for (S v : values) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
  }
}

template <typename S>
Tensor<S> emit(const char* op, Shape shape, std::vector<S> data, Tape<S>* tape, std::vector<NodePtr<S>> inputs,
               typename Tape<S>::Adjoint adjoint) {
  check_finite(op, data);
  Tensor<S> out(std::move(shape), std::move(data));
  if (tape != nullptr) {
    out.set_requires_grad(true);
    tape->record(std::move(inputs), out.node(), std::move(adjoint));
  }
  return out;
}

// c[m,n] += a[m,k] * b[k,n]
template <typename S>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* b, S* c) {
  for (std::size_t i = 0; i < m; ++i) {
    S* crow = c + i * n;
    const S* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      const S* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T
template <typename S>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const S* dc, const S* b, S* da) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S* brow = b + p * n;
      S acc = S(0);
      for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      da[i * k + p] += acc;
    }
  }
}

// db[k,n] += a[m,k]^T * dc[m,n]
template <typename S>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* dc, S* db) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    const S* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      S* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * drow[j];
    }
  }
}

Shape leading(const Shape& s, std::size_t drop) { return Shape(s.begin(), s.end() - static_cast<long>(drop)); }

bool is_suffix(const Shape& whole, const Shape& part) {
  if (part.size() > whole.size()) return false;
  return std::equal(part.rbegin(), part.rend(), whole.rbegin());
}

enum class Broadcast { same, suffix };

Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (is_suffix(a, b)) return Broadcast::suffix;
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b) + " onto " + to_string(a));
}

}  // namespace

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const std::size_t m = a.extent(-2), k = a.extent(-1), n = b.extent(-1);
  if (b.extent(-2) != k) {
    throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const Shape batch_a = leading(a.shape(), 2), batch_b = leading(b.shape(), 2);
  const bool a_batched = !batch_a.empty(), b_batched = !batch_b.empty();
  if (a_batched && b_batched && batch_a != batch_b) {
    throw ShapeError("matmul: batch dims differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Shape out_shape = a_batched ? batch_a : batch_b;
  const std::size_t batches = numel(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<S> out(batches * m * n, S(0));
  const S* ad = a.data().data();
  const S* bd = b.data().data();
  if (!b_batched) {
    gemm_nn(batches * m, k, n, ad, bd, out.data());
  } else {
    for (std::size_t t = 0; t < batches; ++t) {
      gemm_nn(m, k, n, ad + (a_batched ? t * m * k : 0), bd + t * k * n, out.data() + t * m * n);
    }
  }

  Tape<S>* tape = recording_tape<S>({&a, &b});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [an = a.node(), bn = b.node(), m, k, n, batches, a_batched, b_batched](const Node<S>& o) {
      const S* dc = o.grad.data();
      if (S* da = grad_of(*an)) {
        std::vector<S> tmp;
        S* target = da;
        const bool corrupt = corrupt_adjoint_enabled();
        if (corrupt) {
          tmp.assign(an->data.size(), S(0));
          target = tmp.data();
        }
        if (!b_batched) {
          gemm_nt(batches * m, k, n, dc, bn->data.data(), target);
        } else {
          for (std::size_t t = 0; t < batches; ++t) {
            gemm_nt(m, k, n, dc + t * m * n, bn->data.data() + t * k * n, target + (a_batched ? t * m * k : 0));
          }
        }
        if (corrupt) {
          for (std::size_t i = 0; i < tmp.size(); ++i) da[i] += S(1.1) * tmp[i];
        }
      }
      if (S* db = grad_of(*bn)) {
        if (!b_batched) {
          gemm_tn(batches * m, k, n, an->data.data(), dc, db);
        } else {
          for (std::size_t t = 0; t < batches; ++t) {
            gemm_tn(m, k, n, an->data.data() + (a_batched ? t * m * k : 0), dc + t * m * n, db + t * k * n);
          }
        }
      }
    };
  }
  return emit<S>("matmul", std::move(out_shape), std::move(out), tape, {a.node(), b.node()}, std::move(adjoint));
}

namespace {

enum class Elementwise { add, sub, mul };

template <typename S>
Tensor<S> binary(const char* op, Elementwise kind, const Tensor<S>& a, const Tensor<S>& b) {
  broadcast_kind(op, a.shape(), b.shape());
  const std::size_t total = a.size(), period = b.size();
  std::vector<S> out(total);
  const S* ad = a.data().data();
  const S* bd = b.data().data();
  for (std::size_t i = 0; i < total; ++i) {
    const S bv = bd[i % period];
    switch (kind) {
      case Elementwise::add: out[i] = ad[i] + bv; break;
      case Elementwise::sub: out[i] = ad[i] - bv; break;
      case Elementwise::mul: out[i] = ad[i] * bv; break;
    }
  }
  Tape<S>* tape = recording_tape<S>({&a, &b});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [an = a.node(), bn = b.node(), kind, total, period](const Node<S>& o) {
      const S* g = o.grad.data();
      if (S* da = grad_of(*an)) {
        if (kind == Elementwise::mul) {
          for (std::size_t i = 0; i < total; ++i) da[i] += g[i] * bn->data[i % period];
        } else {
          for (std::size_t i = 0; i < total; ++i) da[i] += g[i];
        }
      }
      if (S* db = grad_of(*bn)) {
        for (std::size_t i = 0; i < total; ++i) {
          switch (kind) {
            case Elementwise::add: db[i % period] += g[i]; break;
            case Elementwise::sub: db[i % period] -= g[i]; break;
            case Elementwise::mul: db[i % period] += g[i] * an->data[i]; break;
          }
        }
      }
    };
  }
  return emit<S>(op, a.shape(), std::move(out), tape, {a.node(), b.node()}, std::move(adjoint));
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary("add", Elementwise::add, a, b);
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary("sub", Elementwise::sub, a, b);
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary("mul", Elementwise::mul, a, b);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  std::vector<S> out(x.data().begin(), x.data().end());
  for (S& v : out) v *= factor;
  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node(), factor](const Node<S>& o) {
      if (S* dx = grad_of(*xn)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) dx[i] += factor * o.grad[i];
      }
    };
  }
  return emit<S>("scale", x.shape(), std::move(out), tape, {x.node()}, std::move(adjoint));
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = S(0);
  for (S v : x.data()) total += v;
  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node()](const Node<S>& o) {
      if (S* dx = grad_of(*xn)) {
        for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += o.grad[0];
      }
    };
  }
  return emit<S>("sum", Shape{1}, {total}, tape, {x.node()}, std::move(adjoint));
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

template <typename S>
Tensor<S> sum_last(const Tensor<S>& x) {
  const std::size_t n = x.extent(-1);
  const std::size_t rows = x.size() / n;
  std::vector<S> out(rows, S(0));
  const S* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r] += xd[r * n + j];
  }
  Shape shape = x.rank() > 1 ? leading(x.shape(), 1) : Shape{1};
  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node(), n, rows](const Node<S>& o) {
      if (S* dx = grad_of(*xn)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += o.grad[r];
        }
      }
    };
  }
  return emit<S>("sum_last", std::move(shape), std::move(out), tape, {x.node()}, std::move(adjoint));
}

template <typename S>
Tensor<S> sqrt(const Tensor<S>& x) {
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (x.at(i) < S(0)) throw NumericalError("sqrt of negative value");
    out[i] = std::sqrt(x.at(i));
  }
  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node()](const Node<S>& o) {
      if (S* dx = grad_of(*xn)) {
        for (std::size_t i = 0; i < o.data.size(); ++i) {
          if (o.data[i] > S(0)) dx[i] += o.grad[i] / (S(2) * o.data[i]);
        }
      }
    };
  }
  return emit<S>("sqrt", x.shape(), std::move(out), tape, {x.node()}, std::move(adjoint));
}

template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  const std::size_t n = x.extent(-1);
  const std::size_t rows = x.size() / n;
  std::vector<S> out(x.size());
  const S* xd = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = xd + r * n;
    S* y = out.data() + r * n;
    const S peak = *std::max_element(row, row + n);
    S total = S(0);
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(row[j] - peak);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node(), n, rows](const Node<S>& o) {
      S* dx = grad_of(*xn);
      if (!dx) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* y = o.data.data() + r * n;
        const S* g = o.grad.data() + r * n;
        S dot = S(0);
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += y[j] * (g[j] - dot);
      }
    };
  }
  return emit<S>("softmax_rows", x.shape(), std::move(out), tape, {x.node()}, std::move(adjoint));
}

namespace {

// Shared backward of the two normalizations. For one group of `count` values
// normalized with `rstd`: dx = rstd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)).
template <typename S>
void normalize_backward(std::size_t count, std::size_t stride, const S* xhat, const S* dxhat, S rstd, S* dx) {
  S mean_d = S(0), mean_dx = S(0);
  for (std::size_t i = 0; i < count; ++i) {
    mean_d += dxhat[i * stride];
    mean_dx += dxhat[i * stride] * xhat[i * stride];
  }
  mean_d /= static_cast<S>(count);
  mean_dx /= static_cast<S>(count);
  for (std::size_t i = 0; i < count; ++i) {
    dx[i * stride] += rstd * (dxhat[i * stride] - mean_d - xhat[i * stride] * mean_dx);
  }
}

void require_affine(const char* op, std::size_t channels, std::size_t gamma, std::size_t beta) {
  if (gamma != channels || beta != channels) {
    throw ShapeError(std::string(op) + ": affine parameters must have " + std::to_string(channels) + " entries");
  }
}

}  // namespace

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  if (!(eps > S(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t c = x.extent(-1);
  require_affine("layer_norm", c, gamma.size(), beta.size());
  const std::size_t rows = x.size() / c;
  std::vector<S> xhat(x.size()), out(x.size()), rstd(rows);
  const S* xd = x.data().data();
  const S* g = gamma.data().data();
  const S* b = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = xd + r * c;
    const bool constant = std::all_of(row, row + c, [&](S v) { return v == row[0]; });
    S mu = S(0);
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<S>(c);
    S var = S(0);
    if (!constant) {
      for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<S>(c);
    }
    rstd[r] = S(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = constant ? S(0) : (row[j] - mu) * rstd[r];
      out[r * c + j] = g[j] * xhat[r * c + j] + b[j];
    }
  }
  Tape<S>* tape = recording_tape<S>({&x, &gamma, &beta});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat), rstd = std::move(rstd),
               rows, c](const Node<S>& o) {
      const S* dy = o.grad.data();
      if (S* dg = grad_of(*gn)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) dg[i % c] += dy[i] * xhat[i];
      }
      if (S* db = grad_of(*bn)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) db[i % c] += dy[i];
      }
      if (S* dx = grad_of(*xn)) {
        std::vector<S> dxhat(c);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) dxhat[j] = dy[r * c + j] * gn->data[j];
          normalize_backward(c, 1, xhat.data() + r * c, dxhat.data(), rstd[r], dx + r * c);
        }
      }
    };
  }
  return emit<S>("layer_norm", x.shape(), std::move(out), tape, {x.node(), gamma.node(), beta.node()},
                 std::move(adjoint));
}

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, RunningStats<S>& stats,
                     Mode mode, S eps) {
  const std::size_t c = x.extent(-1);
  require_affine("batch_norm", c, gamma.size(), beta.size());
  const std::size_t rows = x.size() / c;
  const S* xd = x.data().data();
  std::vector<S> mu(c, S(0)), rstd(c, S(0));

  if (mode == Mode::train) {
    if (rows < 2) throw ShapeError("batch_norm: train mode needs at least two positions per channel");
    std::vector<S> var(c, S(0));
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) mu[j] += xd[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) mu[j] /= static_cast<S>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const S d = xd[r * c + j] - mu[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<S>(rows);
    for (std::size_t j = 0; j < c; ++j) rstd[j] = S(1) / std::sqrt(var[j] + eps);

    const S unbias = static_cast<S>(rows) / static_cast<S>(rows - 1);
    if (!stats.ready) {
      stats.mean = mu;
      stats.var.resize(c);
      for (std::size_t j = 0; j < c; ++j) stats.var[j] = var[j] * unbias;
      stats.ready = true;
    } else {
      if (stats.mean.size() != c) throw ShapeError("batch_norm: running statistics have the wrong channel count");
      const S m = static_cast<S>(stats.momentum);
      for (std::size_t j = 0; j < c; ++j) {
        stats.mean[j] = (S(1) - m) * stats.mean[j] + m * mu[j];
        stats.var[j] = (S(1) - m) * stats.var[j] + m * var[j] * unbias;
      }
    }
  } else {
    if (!stats.ready) throw std::logic_error("batch_norm: eval mode before any running statistics exist");
    if (stats.mean.size() != c) throw ShapeError("batch_norm: running statistics have the wrong channel count");
    mu = stats.mean;
    for (std::size_t j = 0; j < c; ++j) rstd[j] = S(1) / std::sqrt(stats.var[j] + eps);
  }

  std::vector<S> xhat(x.size()), out(x.size());
  const S* g = gamma.data().data();
  const S* b = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (xd[i] - mu[j]) * rstd[j];
      out[i] = g[j] * xhat[i] + b[j];
    }
  }

  Tape<S>* tape = recording_tape<S>({&x, &gamma, &beta});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat), rstd = std::move(rstd),
               rows, c, mode](const Node<S>& o) {
      const S* dy = o.grad.data();
      if (S* dg = grad_of(*gn)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) dg[i % c] += dy[i] * xhat[i];
      }
      if (S* db = grad_of(*bn)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) db[i % c] += dy[i];
      }
      if (S* dx = grad_of(*xn)) {
        std::vector<S> dxhat(o.grad.size());
        for (std::size_t i = 0; i < dxhat.size(); ++i) dxhat[i] = dy[i] * gn->data[i % c];
        if (mode == Mode::eval) {
          for (std::size_t i = 0; i < dxhat.size(); ++i) dx[i] += dxhat[i] * rstd[i % c];
        } else {
          for (std::size_t j = 0; j < c; ++j) {
            normalize_backward(rows, c, xhat.data() + j, dxhat.data() + j, rstd[j], dx + j);
          }
        }
      }
    };
  }
  return emit<S>("batch_norm", x.shape(), std::move(out), tape, {x.node(), gamma.node(), beta.node()},
                 std::move(adjoint));
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S v = x.at(i);
    out[i] = v * S(0.5) * (S(1) + std::erf(v / std::numbers::sqrt2_v<S>));
  }
  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node()](const Node<S>& o) {
      S* dx = grad_of(*xn);
      if (!dx) return;
      const S inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<S> / std::numbers::sqrt2_v<S>;
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const S v = xn->data[i];
        const S cdf = S(0.5) * (S(1) + std::erf(v / std::numbers::sqrt2_v<S>));
        const S pdf = inv_sqrt_2pi * std::exp(S(-0.5) * v * v);
        dx[i] += o.grad[i] * (cdf + v * pdf);
      }
    };
  }
  return emit<S>("gelu", x.shape(), std::move(out), tape, {x.node()}, std::move(adjoint));
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const S factor = static_cast<S>(1.0 / (1.0 - rate));
  std::vector<S> mask(x.size());
  for (S& m : mask) m = keep(rng) ? factor : S(0);
  return mul(x, Tensor<S>(x.shape(), std::move(mask)));
}

template <typename S>
Tensor<S> concat_channels(std::span<const Tensor<S>> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  const Shape lead = leading(xs[0].shape(), 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& t : xs) {
    if (leading(t.shape(), 1) != lead) {
      throw ShapeError("concat_channels: leading dims differ, " + to_string(xs[0].shape()) + " vs " +
                       to_string(t.shape()));
    }
    widths.push_back(t.extent(-1));
    total += widths.back();
  }
  const std::size_t rows = numel(lead);
  std::vector<S> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const S* src = xs[t].data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src + r * widths[t], widths[t], out.data() + r * total + offset);
    }
    offset += widths[t];
  }
  Shape shape = lead;
  shape.push_back(total);

  Tape<S>* tape = active_tape<S>();
  if (tape && std::none_of(xs.begin(), xs.end(), [](const Tensor<S>& t) { return t.requires_grad(); })) {
    tape = nullptr;
  }
  std::vector<NodePtr<S>> inputs;
  for (const auto& t : xs) inputs.push_back(t.node());
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [inputs, widths, rows, total](const Node<S>& o) {
      std::size_t off = 0;
      for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (S* dx = grad_of(*inputs[t])) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < widths[t]; ++j) dx[r * widths[t] + j] += o.grad[r * total + off + j];
          }
        }
        off += widths[t];
      }
    };
  }
  return emit<S>("concat_channels", std::move(shape), std::move(out), tape, inputs, std::move(adjoint));
}

template <typename S>
std::vector<Tensor<S>> split_channels(const Tensor<S>& x, std::span<const std::size_t> sizes) {
  const std::size_t c = x.extent(-1);
  const std::size_t requested = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (sizes.empty() || requested != c) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(requested) + " but channel extent is " +
                     std::to_string(c));
  }
  const std::size_t rows = x.size() / c;
  const Shape lead = leading(x.shape(), 1);
  Tape<S>* tape = recording_tape<S>({&x});
  std::vector<Tensor<S>> parts;
  std::size_t offset = 0;
  for (std::size_t width : sizes) {
    if (width == 0) throw ShapeError("split_channels: zero-width part");
    std::vector<S> out(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(x.data().data() + r * c + offset, width, out.data() + r * width);
    }
    Shape shape = lead;
    shape.push_back(width);
    typename Tape<S>::Adjoint adjoint;
    if (tape) {
      adjoint = [xn = x.node(), rows, c, offset, width](const Node<S>& o) {
        if (S* dx = grad_of(*xn)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) dx[r * c + offset + j] += o.grad[r * width + j];
          }
        }
      };
    }
    parts.push_back(emit<S>("split_channels", std::move(shape), std::move(out), tape, {x.node()}, std::move(adjoint)));
    offset += width;
  }
  return parts;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  }
  std::vector<S> out(x.data().begin(), x.data().end());
  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node()](const Node<S>& o) {
      if (S* dx = grad_of(*xn)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) dx[i] += o.grad[i];
      }
    };
  }
  return emit<S>("reshape", std::move(shape), std::move(out), tape, {x.node()}, std::move(adjoint));
}

template <typename S>
Tensor<S> swap_axes(const Tensor<S>& x, int axis_a, int axis_b) {
  const int r = static_cast<int>(x.rank());
  const int a = axis_a < 0 ? axis_a + r : axis_a;
  const int b = axis_b < 0 ? axis_b + r : axis_b;
  if (a < 0 || a >= r || b < 0 || b >= r) throw ShapeError("swap_axes: axis out of range");
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<std::size_t>(a)], out_shape[static_cast<std::size_t>(b)]);

  // Source flat index for every destination flat index.
  const std::size_t rank = x.rank();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  std::vector<std::size_t> strides = in_strides;
  std::swap(strides[static_cast<std::size_t>(a)], strides[static_cast<std::size_t>(b)]);
  std::vector<std::size_t> source(x.size());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < source.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * strides[d];
    source[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<S> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(source[i]);

  Tape<S>* tape = recording_tape<S>({&x});
  typename Tape<S>::Adjoint adjoint;
  if (tape) {
    adjoint = [xn = x.node(), source = std::move(source)](const Node<S>& o) {
      if (S* dx = grad_of(*xn)) {
        for (std::size_t i = 0; i < source.size(); ++i) dx[source[i]] += o.grad[i];
      }
    };
  }
  return emit<S>("swap_axes", std::move(out_shape), std::move(out), tape, {x.node()}, std::move(adjoint));
}

#define DCGCT_INSTANTIATE_OPS(S)                                                                            \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                           \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                              \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                              \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                              \
  template Tensor<S> scale(const Tensor<S>&, S);                                                           \
  template Tensor<S> sum(const Tensor<S>&);                                                                \
  template Tensor<S> mean(const Tensor<S>&);                                                               \
  template Tensor<S> sum_last(const Tensor<S>&);                                                           \
  template Tensor<S> sqrt(const Tensor<S>&);                                                               \
  template Tensor<S> softmax_rows(const Tensor<S>&);                                                       \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);                  \
  template Tensor<S> batch_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, RunningStats<S>&, Mode, \
                                S);                                                                        \
  template Tensor<S> gelu(const Tensor<S>&);                                                               \
  template Tensor<S> dropout(const Tensor<S>&, double, std::mt19937_64&);                                  \
  template Tensor<S> concat_channels(std::span<const Tensor<S>>);                                          \
  template std::vector<Tensor<S>> split_channels(const Tensor<S>&, std::span<const std::size_t>);          \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                     \
  template Tensor<S> swap_axes(const Tensor<S>&, int, int);

DCGCT_INSTANTIATE_OPS(float)
DCGCT_INSTANTIATE_OPS(double)

}  // namespace dcgct::ad
