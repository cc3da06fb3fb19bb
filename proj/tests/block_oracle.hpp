#pragma once

// Straight-line, loop-only transcription of one double-chain layer for a
// single pose (batch of one), in eval mode. Shares no code with the model
// beyond reading its parameter values.

#include <cmath>
#include <cstddef>
#include <vector>

#include "dcgct/model.hpp"
#include "dcgct/skeleton.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;  // [rows][cols]

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline Mat weights(const dcgct::ad::Tensor<double>& t) {
  const std::size_t r = t.extent(0), c = t.extent(1);
  Mat m = zeros(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.at(i * c + j);
  }
  return m;
}

inline std::vector<double> vec(const dcgct::ad::Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

inline Mat linear(const Mat& x, const dcgct::model::Linear<double>& layer) {
  const Mat w = weights(layer.weight);
  const auto b = vec(layer.bias);
  Mat y = zeros(x.size(), b.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t o = 0; o < b.size(); ++o) {
      double s = b[o];
      for (std::size_t c = 0; c < x[i].size(); ++c) s += x[i][c] * w[c][o];
      y[i][o] = s;
    }
  }
  return y;
}

inline Mat layer_norm(const Mat& x, const dcgct::model::Affine<double>& a) {
  const auto g = vec(a.gamma), b = vec(a.beta);
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0.0, var = 0.0;
    for (double v : x[i]) mu += v;
    mu /= n;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= n;
    for (std::size_t c = 0; c < x[i].size(); ++c) y[i][c] = (x[i][c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
  return y;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

// H' = sum_k D_k^{-1/2} A_k D_k^{-1/2} H W_k, then BN (running statistics),
// GELU and a pointwise projection; two stages after an entry layer norm.
inline Mat lcm(const Mat& x, const dcgct::graph::AdjacencySet& adj, const dcgct::model::LcmParams<double>& p) {
  Mat h = layer_norm(x, p.entry_norm);
  const std::size_t n = x.size();
  for (const auto& stage : p.stages) {
    const std::size_t wide = stage.bias.size();
    Mat acc = zeros(n, wide);
    for (std::size_t k = 0; k < dcgct::graph::kCategoryCount; ++k) {
      const Mat w = weights(stage.filters[k]);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double a = adj.normalized[k](i, j);
          if (a == 0.0) continue;
          for (std::size_t o = 0; o < wide; ++o) {
            double s = 0.0;
            for (std::size_t c = 0; c < h[j].size(); ++c) s += h[j][c] * w[c][o];
            acc[i][o] += a * s;
          }
        }
      }
    }
    const auto bias = vec(stage.bias);
    const auto gamma = vec(stage.norm.affine.gamma), beta = vec(stage.norm.affine.beta);
    const auto& stats = *stage.norm.stats;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < wide; ++o) {
        const double z = (acc[i][o] + bias[o] - stats.mean[o]) / std::sqrt(stats.var[o] + 1e-5) * gamma[o] + beta[o];
        acc[i][o] = gelu(z);
      }
    }
    h = linear(acc, stage.conv);
  }
  return h;
}

// MSA = Concat(head_1..head_h) W^O, head_i = softmax(Q_i K_i^T / sqrt(C/h)) V_i.
inline Mat gcm(const Mat& x, const dcgct::model::GcmParams<double>& p, std::size_t heads) {
  const Mat q = linear(x, p.query), k = linear(x, p.key), v = linear(x, p.value);
  const std::size_t n = x.size(), c = q[0].size(), d = c / heads;
  Mat concat = zeros(n, c);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> score(n);
      double top = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t e = 0; e < d; ++e) s += q[i][h * d + e] * k[j][h * d + e];
        score[j] = s / std::sqrt(static_cast<double>(d));
        top = std::max(top, score[j]);
      }
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - top));
      for (std::size_t e = 0; e < d; ++e) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += score[j] / z * v[j][h * d + e];
        concat[i][h * d + e] = acc;
      }
    }
  }
  return linear(concat, p.out);
}

inline Mat hconcat(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i].insert(out[i].end(), b[i].begin(), b[i].end());
  return out;
}

inline Mat columns(const Mat& x, std::size_t begin, std::size_t end) {
  Mat out = zeros(x.size(), end - begin);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t c = begin; c < end; ++c) out[i][c - begin] = x[i][c];
  }
  return out;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t c = 0; c < a[i].size(); ++c) out[i][c] += b[i][c];
  }
  return out;
}

inline Mat double_chain_layer(const Mat& x_m, const dcgct::model::BlockParams<double>& p,
                              const dcgct::graph::AdjacencySet& adj, const dcgct::ModelConfig& cfg) {
  const std::size_t c1 = cfg.local_channels, c = cfg.channels;
  const Mat x_l2g = columns(x_m, 0, c1);
  const Mat x_g2l = columns(x_m, c1, c);

  const Mat l2g_local = lcm(x_l2g, adj, *p.l2g_local);
  const Mat g2l_global = gcm(x_g2l, *p.g2l_global, cfg.heads);

  const Mat fused = linear(linear(hconcat(l2g_local, g2l_global), p.fim->reduce), p.fim->expand);
  const Mat l2g_o = add(l2g_local, columns(fused, 0, c1));
  const Mat g2l_o = add(g2l_global, columns(fused, c1, c));

  const Mat l2g_global = gcm(l2g_o, *p.l2g_global, cfg.heads);
  const Mat g2l_local = lcm(g2l_o, adj, *p.g2l_local);

  const Mat x_prime = add(hconcat(l2g_global, g2l_local), hconcat(l2g_local, g2l_global));
  Mat hidden = linear(layer_norm(x_prime, p.norm), p.mlp_in);
  for (auto& row : hidden) {
    for (auto& v : row) v = gelu(v);
  }
  return add(linear(hidden, p.mlp_out), x_prime);
}

}  // namespace oracle
