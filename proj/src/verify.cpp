#include "dcgct/verify.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "dcgct/grad_check.hpp"
#include "dcgct/metrics.hpp"
#include "dcgct/model.hpp"
#include "dcgct/ops.hpp"
#include "dcgct/skeleton.hpp"
#include "dcgct/training.hpp"

namespace dcgct::verify {

using ad::Shape;
using T = ad::Tensor<double>;

namespace {

T random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(ad::numel(shape));
  for (auto& v : values) v = dist(rng);
  return T(std::move(shape), std::move(values));
}

// Reduces an output to a scalar with fixed random weights so every output
// coordinate contributes a distinct, order-one sensitivity.
class Probe {
 public:
  explicit Probe(std::uint64_t seed) : seed_(seed) {}
  T operator()(const T& y) {
    auto it = weights_.find(y.shape());
    if (it == weights_.end()) {
      std::mt19937_64 rng(seed_ + weights_.size());
      it = weights_.emplace(y.shape(), random_tensor(y.shape(), rng)).first;
    }
    return ad::sum(ad::mul(y, it->second));
  }

 private:
  std::uint64_t seed_;
  std::map<Shape, T> weights_;
};

CheckResult make_result(std::string suite, std::string name, double value, double threshold, std::string detail = {}) {
  CheckResult r{std::move(suite), std::move(name), value, threshold, false, std::move(detail)};
  r.passed = std::isfinite(value) && value <= threshold;
  return r;
}

class GradRunner {
 public:
  GradRunner(std::vector<CheckResult>& out, std::uint64_t seed) : out_(out), probe_(seed ^ 0x5bd1e995ULL) {}

  // `f` receives the tensor under test; other operands are captured constants.
  void check(const std::string& name, const std::function<T(const T&)>& f, T x,
             double threshold = kPrimitiveTolerance) {
    try {
      const auto r = ad::grad_check([&](const T& v) { return probe_(f(v)); }, std::move(x));
      std::ostringstream detail;
      detail << "index " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric;
      out_.push_back(make_result("grads", name, r.max_error, threshold, detail.str()));
    } catch (const std::exception& e) {
      out_.push_back(make_result("grads", name, INFINITY, threshold, e.what()));
    }
  }

  // Checks a loss that is already scalar, without the random probe.
  // Worst error over every named tensor; the detail names the offender.
  void check_all_parameters(const std::string& name, const std::function<T(const T&)>& f,
                            const std::vector<std::pair<std::string, T>>& params, double threshold) {
    double worst = 0.0;
    std::string detail;
    std::size_t scalars = 0;
    try {
      for (const auto& [pname, p] : params) {
        const auto r = ad::grad_check(f, p);
        scalars += p.size();
        if (detail.empty() || r.max_error > worst) {
          worst = r.max_error;
          std::ostringstream os;
          os << pname << " index " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric;
          detail = os.str();
        }
      }
      out_.push_back(make_result("grads", name, worst, threshold,
                                 std::to_string(scalars) + " scalars; worst " + detail));
    } catch (const std::exception& e) {
      out_.push_back(make_result("grads", name, INFINITY, threshold, e.what()));
    }
  }

  void check_scalar(const std::string& name, const std::function<T(const T&)>& f, T x, double threshold) {
    try {
      const auto r = ad::grad_check(f, std::move(x));
      std::ostringstream detail;
      detail << "index " << r.worst_index << " analytic " << r.analytic << " numeric " << r.numeric;
      out_.push_back(make_result("grads", name, r.max_error, threshold, detail.str()));
    } catch (const std::exception& e) {
      out_.push_back(make_result("grads", name, INFINITY, threshold, e.what()));
    }
  }

 private:
  std::vector<CheckResult>& out_;
  Probe probe_;
};

ModelConfig tiny_config(std::size_t frames) {
  ModelConfig c;
  c.layers = 1;
  c.channels = 16;
  c.local_channels = 4;
  c.global_channels = 12;
  c.heads = 2;
  c.mlp_expansion = 2;
  c.frames = frames;
  c.sequence_channels = 8;
  c.output_scale = 1.0;
  return c;
}

void primitive_grads(GradRunner& g, std::mt19937_64& rng) {
  const T a = random_tensor({3, 4}, rng);
  const T b = random_tensor({4, 5}, rng);
  g.check("matmul.lhs", [&](const T& x) { return ad::matmul(x, b); }, a.clone());
  g.check("matmul.rhs", [&](const T& x) { return ad::matmul(a, x); }, b.clone());
  const T batched = random_tensor({2, 3, 4}, rng);
  g.check("matmul.batched_lhs", [&](const T& x) { return ad::matmul(x, b); }, batched.clone());
  g.check("matmul.broadcast_rhs", [&](const T& x) { return ad::matmul(batched, x); }, b.clone());
  const T sq = random_tensor({3, 3}, rng);
  g.check("matmul.broadcast_lhs", [&](const T& x) { return ad::matmul(x, batched); }, sq.clone());

  const T u = random_tensor({2, 3, 4}, rng);
  const T v = random_tensor({2, 3, 4}, rng);
  const T row = random_tensor({4}, rng);
  g.check("add.lhs", [&](const T& x) { return ad::add(x, v); }, u.clone());
  g.check("add.broadcast", [&](const T& x) { return ad::add(u, x); }, row.clone());
  g.check("sub.lhs", [&](const T& x) { return ad::sub(x, v); }, u.clone());
  g.check("sub.rhs", [&](const T& x) { return ad::sub(u, x); }, v.clone());
  g.check("mul.lhs", [&](const T& x) { return ad::mul(x, v); }, u.clone());
  g.check("mul.broadcast", [&](const T& x) { return ad::mul(u, x); }, row.clone());
  g.check("scale", [&](const T& x) { return ad::scale(x, 2.5); }, u.clone());
  g.check("sum", [&](const T& x) { return ad::scale(ad::sum(x), 1.0); }, u.clone());
  g.check("mean", [&](const T& x) { return ad::mean(x); }, u.clone());
  g.check("sum_last", [&](const T& x) { return ad::sum_last(x); }, u.clone());

  T positive = u.clone();
  for (auto& p : positive.data()) p = std::abs(p) + 0.5;
  g.check("sqrt", [&](const T& x) { return ad::sqrt(x); }, positive);

  g.check("softmax_rows", [&](const T& x) { return ad::softmax_rows(x); }, u.clone());

  const T gamma = random_tensor({4}, rng);
  const T beta = random_tensor({4}, rng);
  g.check("layer_norm.x", [&](const T& x) { return ad::layer_norm(x, gamma, beta); }, u.clone());
  g.check("layer_norm.gamma", [&](const T& x) { return ad::layer_norm(u, x, beta); }, gamma.clone());
  g.check("layer_norm.beta", [&](const T& x) { return ad::layer_norm(u, gamma, x); }, beta.clone());

  auto bn = [](const T& x, const T& gm, const T& bt) {
    ad::RunningStats<double> stats;
    return ad::batch_norm(x, gm, bt, stats, ad::Mode::train);
  };
  g.check("batch_norm.x", [&](const T& x) { return bn(x, gamma, beta); }, u.clone());
  g.check("batch_norm.gamma", [&](const T& x) { return bn(u, x, beta); }, gamma.clone());
  g.check("batch_norm.beta", [&](const T& x) { return bn(u, gamma, x); }, beta.clone());

  g.check("gelu", [&](const T& x) { return ad::gelu(x); }, u.clone());
  g.check("dropout", [&](const T& x) {
    std::mt19937_64 mask_rng(7);
    return ad::dropout(x, 0.3, mask_rng);
  }, u.clone());

  const T w = random_tensor({2, 3, 2}, rng);
  g.check("concat_channels.first", [&](const T& x) { return ad::concat_channels({x, w}); }, u.clone());
  g.check("concat_channels.second", [&](const T& x) { return ad::concat_channels({u, x}); }, w.clone());
  g.check("split_channels", [&](const T& x) {
    auto parts = ad::split_channels(x, {1, 3});
    return ad::concat_channels({ad::scale(parts[1], 3.0), parts[0]});
  }, u.clone());
  g.check("reshape", [&](const T& x) { return ad::reshape(x, Shape{6, 4}); }, u.clone());
  g.check("swap_axes", [&](const T& x) { return ad::swap_axes(x, 0, 1); }, u.clone());
  g.check("transpose_last", [&](const T& x) { return ad::transpose_last(x); }, u.clone());

  // Size-1 extents on every axis that allows them.
  const T col = random_tensor({1, 3, 1}, rng);
  const T unit_rhs = random_tensor({1, 2}, rng);
  g.check("matmul.unit_extents", [&](const T& x) { return ad::matmul(x, unit_rhs); }, col.clone());
  g.check("softmax_rows.single_column", [&](const T& x) { return ad::softmax_rows(x); }, col.clone());
  g.check("sum_last.single_column", [&](const T& x) { return ad::sum_last(x); }, col.clone());
  g.check("mul.unit_broadcast", [&](const T& x) { return ad::mul(col, x); }, random_tensor({1}, rng));
  const T one_row = random_tensor({1, 1, 4}, rng);
  g.check("layer_norm.single_row", [&](const T& x) { return ad::layer_norm(x, gamma, beta); }, one_row.clone());
  g.check("gelu.single_element", [&](const T& x) { return ad::gelu(x); }, random_tensor({1}, rng));
  g.check("swap_axes.unit_axis", [&](const T& x) { return ad::swap_axes(x, 0, 2); }, col.clone());
}

void module_grads(GradRunner& g, std::mt19937_64& rng, std::uint64_t seed) {
  const auto topo = graph::h36m17();
  const ModelConfig cfg = tiny_config(1);
  const model::Model<double> m(cfg, topo, seed);
  const auto& block = m.params().blocks.at(0);
  const std::size_t n = topo.joint_count();

  const T x_local = random_tensor({2, n, cfg.local_channels}, rng);
  const T x_global = random_tensor({2, n, cfg.global_channels}, rng);
  const T x_full = random_tensor({2, n, cfg.channels}, rng);

  g.check("linear.x", [&](const T& x) { return model::linear(x, block.mlp_in); }, x_full.clone(), kCompositeTolerance);
  g.check("gcm.x", [&](const T& x) { return model::gcm_forward(x, *block.g2l_global, cfg.heads); }, x_global.clone(),
          kCompositeTolerance);
  g.check("gcm.query_weight",
          [&](const T&) { return model::gcm_forward(x_global, *block.g2l_global, cfg.heads); },
          block.g2l_global->query.weight, kCompositeTolerance);
  g.check("lcm.x", [&](const T& x) { return model::lcm_forward(x, m.adjacency(), *block.l2g_local, ad::Mode::train); },
          x_local.clone(), kCompositeTolerance);
  g.check("lcm.filter_toward_root",
          [&](const T&) { return model::lcm_forward(x_local, m.adjacency(), *block.l2g_local, ad::Mode::train); },
          block.l2g_local->stages[0].filters[1], kCompositeTolerance);
  g.check("fim.local", [&](const T& x) {
    auto [a, b] = model::fim_forward(x, x_global, *block.fim);
    return ad::concat_channels({a, b});
  }, x_local.clone(), kCompositeTolerance);
  g.check("double_chain_block.x", [&](const T& x) {
    return model::double_chain_block(x, block, m.adjacency(), cfg, {ad::Mode::train, nullptr});
  }, x_full.clone(), kCompositeTolerance);
}

void end_to_end_grads(GradRunner& g, std::mt19937_64& rng, std::uint64_t seed) {
  const auto topo = graph::h36m17();
  const std::size_t n = topo.joint_count();
  const std::vector<double> weights = [&] {
    std::vector<double> w(n);
    std::uniform_real_distribution<double> dist(0.5, 2.0);
    for (auto& v : w) v = dist(rng);
    return w;
  }();

  for (std::size_t frames : {std::size_t{1}, std::size_t{3}}) {
    const ModelConfig cfg = tiny_config(frames);
    const model::Model<double> m(cfg, topo, seed + frames);
    const Shape in_shape = frames == 1 ? Shape{2, n, 2} : Shape{2, frames, n, 2};
    const T input = random_tensor(in_shape, rng, 0.5);
    const T target = random_tensor({2, n, 3}, rng, 2.0);
    auto loss = [&](const T& x) {
      return train::weighted_pose_loss(m.forward(x, {ad::Mode::train, nullptr}), target, weights);
    };
    auto loss_of_params = [&](const T&) {
      return train::weighted_pose_loss(m.forward(input, {ad::Mode::train, nullptr}), target, weights);
    };
    const std::string tag = frames == 1 ? "end_to_end" : "end_to_end_seq";
    g.check_scalar(tag + ".input", loss, input.clone(), kCompositeTolerance);
    g.check_all_parameters(tag + ".all_parameters", loss_of_params, m.named_parameters(), kCompositeTolerance);
  }
}

// ---- invariants ----

void adjacency_invariants(std::vector<CheckResult>& out) {
  const auto topo = graph::h36m17();
  const std::size_t n = topo.joint_count();
  const auto adj = graph::decompose_adjacency(topo);

  double self_dev = 0.0;
  double negative = 0.0;
  double off_support = 0.0;
  double zero_rows = 0.0;
  double formula_dev = 0.0;
  double row_sum_excess = 0.0;
  for (std::size_t k = 0; k < graph::kCategoryCount; ++k) {
    const auto& raw = adj.raw[k];
    const auto& norm = adj.normalized[k];
    std::vector<double> rdeg(n, 0.0), cdeg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        rdeg[i] += raw(i, j);
        cdeg[j] += raw(i, j);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = norm(i, j);
        row_sum += v;
        if (v < 0.0) negative += 1.0;
        if (v != 0.0 && raw(i, j) == 0.0) off_support += 1.0;
        if (rdeg[i] == 0.0 && v != 0.0) zero_rows += 1.0;
        const double expect = raw(i, j) == 0.0 ? 0.0 : raw(i, j) / std::sqrt(rdeg[i] * cdeg[j]);
        formula_dev = std::max(formula_dev, std::abs(v - expect));
        if (k == 0) self_dev = std::max(self_dev, std::abs(v - (i == j ? 1.0 : 0.0)));
      }
      // One child per parent gives the away-from-root row sum sqrt(#children); the
      // other categories stay within 1.
      const double bound = static_cast<graph::Category>(k) == graph::Category::away_from_root
                               ? std::sqrt(static_cast<double>(topo.children(i).size()))
                               : 1.0;
      row_sum_excess = std::max(row_sum_excess, row_sum - bound);
    }
  }
  out.push_back(make_result("invariants", "adjacency.self_is_identity", self_dev, 0.0));
  out.push_back(make_result("invariants", "adjacency.nonnegative", negative, 0.0));
  out.push_back(make_result("invariants", "adjacency.support_within_raw_edges", off_support, 0.0));
  out.push_back(make_result("invariants", "adjacency.zero_degree_rows_zero", zero_rows, 0.0));
  out.push_back(make_result("invariants", "adjacency.normalization_formula", formula_dev, 1e-15));
  out.push_back(make_result("invariants", "adjacency.row_sum_bound", std::max(0.0, row_sum_excess), 1e-12));

  // Single merged graph built straight from parent links and pairs.
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (topo.parent[i]) {
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(*topo.parent[i])) = 1.0;
      a(static_cast<Eigen::Index>(*topo.parent[i]), static_cast<Eigen::Index>(i)) = 1.0;
    }
  }
  for (const auto& [p, q] : topo.symmetric_pairs) {
    a(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q)) = 1.0;
    a(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(p)) = 1.0;
  }
  const Eigen::VectorXd d = a.rowwise().sum().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd expected = d.asDiagonal() * a * d.asDiagonal();
  const auto merged = graph::merged_adjacency(topo);
  double merged_dev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      merged_dev = std::max(merged_dev,
                            std::abs(merged(i, j) - expected(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    }
  }
  out.push_back(make_result("invariants", "adjacency.merged_matches_single_graph", merged_dev, 1e-15));

  const auto again = graph::decompose_adjacency(topo);
  double differs = 0.0;
  for (std::size_t k = 0; k < graph::kCategoryCount; ++k) {
    if (!(again.normalized[k] == adj.normalized[k])) differs += 1.0;
  }
  out.push_back(make_result("invariants", "adjacency.deterministic", differs, 0.0));
}

std::vector<std::size_t> hop_distances(const graph::SkeletonTopology& topo, std::size_t from) {
  const auto merged = graph::merged_adjacency(topo);
  const std::size_t n = topo.joint_count();
  std::vector<std::size_t> dist(n, n + 1);
  std::deque<std::size_t> queue{from};
  dist[from] = 0;
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    for (std::size_t j = 0; j < n; ++j) {
      if (merged(i, j) != 0.0 && dist[j] > dist[i] + 1) {
        dist[j] = dist[i] + 1;
        queue.push_back(j);
      }
    }
  }
  return dist;
}

void module_invariants(std::vector<CheckResult>& out, std::mt19937_64& rng, std::uint64_t seed) {
  const auto topo = graph::h36m17();
  const std::size_t n = topo.joint_count();
  ModelConfig cfg = tiny_config(1);
  model::Model<double> m(cfg, topo, seed);
  const auto& block = m.params().blocks.at(0);

  // Attention carries no positional information: permuting joints permutes outputs.
  {
    const T x = random_tensor({2, n, cfg.global_channels}, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    T xp = T::zeros(x.shape());
    const std::size_t c = cfg.global_channels;
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < c; ++k) xp.data()[(b * n + j) * c + k] = x.data()[(b * n + perm[j]) * c + k];
      }
    }
    const T y = model::gcm_forward(x, *block.g2l_global, cfg.heads);
    const T yp = model::gcm_forward(xp, *block.g2l_global, cfg.heads);
    double dev = 0.0;
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < c; ++k) {
          dev = std::max(dev, std::abs(yp.data()[(b * n + j) * c + k] - y.data()[(b * n + perm[j]) * c + k]));
        }
      }
    }
    out.push_back(make_result("invariants", "gcm.permutation_equivariance", dev, 1e-12));
  }

  // Two graph stages reach exactly the joints within two hops.
  {
    const std::size_t c = cfg.local_channels;
    const T warm = random_tensor({4, n, c}, rng);
    (void)model::lcm_forward(warm, m.adjacency(), *block.l2g_local, ad::Mode::train);
    const T x = random_tensor({1, n, c}, rng);
    const std::size_t source = 15;
    T x2 = x.clone();
    std::normal_distribution<double> bump(0.0, 1.0);
    for (std::size_t k = 0; k < c; ++k) x2.data()[source * c + k] += bump(rng);
    const T y = model::lcm_forward(x, m.adjacency(), *block.l2g_local, ad::Mode::eval);
    const T y2 = model::lcm_forward(x2, m.adjacency(), *block.l2g_local, ad::Mode::eval);
    const auto dist = hop_distances(topo, source);
    double leak = 0.0;
    double reach = INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double change = 0.0;
      for (std::size_t k = 0; k < c; ++k) change = std::max(change, std::abs(y2.data()[j * c + k] - y.data()[j * c + k]));
      if (dist[j] > 2) leak = std::max(leak, change);
      if (dist[j] <= 1) reach = std::min(reach, change);
    }
    out.push_back(make_result("invariants", "lcm.two_hop_locality", leak, 0.0));
    out.push_back(make_result("invariants", "lcm.neighbors_respond", reach > 1e-9 ? 0.0 : 1.0, 0.0,
                              "smallest one-hop response " + std::to_string(reach)));
  }

  // The fusion map is linear through a C/r bottleneck.
  {
    const std::size_t c = cfg.channels;
    const T zeros_local = T::zeros({1, 1, cfg.local_channels});
    const T zeros_global = T::zeros({1, 1, cfg.global_channels});
    auto apply = [&](const T& l, const T& g) {
      auto [a, b] = model::fim_forward(l, g, *block.fim);
      return ad::concat_channels({a, b});
    };
    const T offset = apply(zeros_local, zeros_global);
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < c; ++i) {
      T l = zeros_local.clone();
      T g = zeros_global.clone();
      if (i < cfg.local_channels) l.data()[i] = 1.0;
      else g.data()[i - cfg.local_channels] = 1.0;
      const T y = apply(l, g);
      for (std::size_t k = 0; k < c; ++k) {
        jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = y.data()[k] - offset.data()[k];
      }
    }
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues();
    const std::size_t bound = c / cfg.fim_reduction;
    double tail = 0.0;
    for (Eigen::Index i = static_cast<Eigen::Index>(bound); i < sv.size(); ++i) tail = std::max(tail, sv(i));
    out.push_back(make_result("invariants", "fim.rank_bound", tail / sv(0), 1e-10,
                              "rank bound " + std::to_string(bound) + " of " + std::to_string(c)));
  }
}

void primitive_invariants(std::vector<CheckResult>& out, std::mt19937_64& rng) {
  {
    const T x = random_tensor({5, 7}, rng, 3.0);
    const T y = ad::softmax_rows(x);
    T shifted = x.clone();
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t k = 0; k < 7; ++k) shifted.data()[r * 7 + k] += 10.0 * static_cast<double>(r) - 20.0;
    }
    const T ys = ad::softmax_rows(shifted);
    double sum_dev = 0.0, shift_dev = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 7; ++k) {
        s += y.data()[r * 7 + k];
        shift_dev = std::max(shift_dev, std::abs(y.data()[r * 7 + k] - ys.data()[r * 7 + k]));
      }
      sum_dev = std::max(sum_dev, std::abs(s - 1.0));
    }
    out.push_back(make_result("invariants", "softmax.rows_sum_to_one", sum_dev, 1e-12));
    out.push_back(make_result("invariants", "softmax.shift_invariance", shift_dev, 1e-12));
    const T big = ad::softmax_rows(T({1, 2}, {1000.0, 0.0}));
    out.push_back(make_result("invariants", "softmax.large_logits_stable",
                              std::abs(big.data()[0] - 1.0) + std::abs(big.data()[1]), 1e-12));
  }
  {
    const std::size_t c = 16;
    const T x = random_tensor({6, c}, rng, 10.0);
    const T gamma = T::full({c}, 1.0);
    const T beta = T::zeros({c});
    const T y = ad::layer_norm(x, gamma, beta);
    T affine = x.clone();
    for (auto& v : affine.data()) v = 3.0 * v + 7.0;
    const T ya = ad::layer_norm(affine, gamma, beta);
    double mean_dev = 0.0, var_dev = 0.0, affine_dev = 0.0;
    for (std::size_t r = 0; r < 6; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t k = 0; k < c; ++k) mu += y.data()[r * c + k];
      mu /= static_cast<double>(c);
      for (std::size_t k = 0; k < c; ++k) {
        const double d = y.data()[r * c + k] - mu;
        var += d * d;
        affine_dev = std::max(affine_dev, std::abs(y.data()[r * c + k] - ya.data()[r * c + k]));
      }
      mean_dev = std::max(mean_dev, std::abs(mu));
      var_dev = std::max(var_dev, std::abs(var / static_cast<double>(c) - 1.0));
    }
    out.push_back(make_result("invariants", "layer_norm.zero_mean", mean_dev, 1e-12));
    out.push_back(make_result("invariants", "layer_norm.unit_variance", var_dev, 1e-6));
    out.push_back(make_result("invariants", "layer_norm.affine_input_invariance", affine_dev, 1e-6));
    const T constant = ad::layer_norm(T::full({1, c}, 4.2), gamma, beta);
    double max_abs = 0.0;
    for (double v : constant.data()) max_abs = std::max(max_abs, std::abs(v));
    out.push_back(make_result("invariants", "layer_norm.constant_row_collapses_to_beta", max_abs, 0.0));
  }
  {
    const auto topo = graph::h36m17();
    const std::size_t n = topo.joint_count();
    double mismatches = 0.0;
    for (std::size_t dims : {std::size_t{2}, std::size_t{3}}) {
      const T p = random_tensor({3, n, dims}, rng, 100.0);
      const auto once = graph::flip_pose<double>(p.data(), dims, topo);
      const auto twice = graph::flip_pose<double>(once, dims, topo);
      for (std::size_t i = 0; i < twice.size(); ++i) {
        if (twice[i] != p.data()[i]) mismatches += 1.0;
      }
    }
    out.push_back(make_result("invariants", "flip.involution", mismatches, 0.0));
  }
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  Eigen::Quaterniond q(dist(rng), dist(rng), dist(rng), dist(rng));
  return q.normalized().toRotationMatrix();
}

void metric_invariants(std::vector<CheckResult>& out, std::mt19937_64& rng) {
  const std::size_t n = 17;
  const std::size_t samples = 32;
  std::normal_distribution<double> dist(0.0, 200.0);
  std::normal_distribution<double> noise(0.0, 30.0);
  std::vector<double> gt_values(samples * n * 3), pred_values(samples * n * 3);
  for (std::size_t i = 0; i < gt_values.size(); ++i) {
    gt_values[i] = dist(rng);
    pred_values[i] = gt_values[i] + noise(rng);
  }
  const metrics::PoseSet gt(samples, n, gt_values);
  const metrics::PoseSet pred(samples, n, pred_values);

  // Optimality: no perturbed similarity transform beats the closed-form alignment,
  // and aligning never increases the squared error.
  double optimality_violations = 0.0;
  double aligned_worse = 0.0;
  std::normal_distribution<double> small(0.0, 0.02);
  for (std::size_t s = 0; s < samples; ++s) {
    const metrics::Points g = gt.sample(s);
    const metrics::Points p = pred.sample(s);
    const metrics::Points aligned = metrics::procrustes_align(p, g);
    const double best = (aligned - g).squaredNorm();
    if (best > (p - g).squaredNorm() * (1.0 + 1e-12)) aligned_worse += 1.0;
    const Eigen::RowVector3d mu = aligned.colwise().mean();
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::Matrix3d r = Eigen::AngleAxisd(small(rng), Eigen::Vector3d::UnitX()).toRotationMatrix() *
                                Eigen::AngleAxisd(small(rng), Eigen::Vector3d::UnitY()).toRotationMatrix() *
                                Eigen::AngleAxisd(small(rng), Eigen::Vector3d::UnitZ()).toRotationMatrix();
      const double scale = 1.0 + small(rng);
      const Eigen::RowVector3d shift(small(rng) * 50.0, small(rng) * 50.0, small(rng) * 50.0);
      const metrics::Points moved = ((scale * ((aligned.rowwise() - mu) * r.transpose())).rowwise() + mu).rowwise() + shift;
      if ((moved - g).squaredNorm() < best * (1.0 - 1e-12)) optimality_violations += 1.0;
    }
  }
  out.push_back(make_result("invariants", "procrustes.optimality", optimality_violations, 0.0));
  out.push_back(make_result("invariants", "procrustes.aligned_not_worse", aligned_worse, 0.0));

  std::vector<double> moved_values(pred_values.size());
  for (std::size_t s = 0; s < samples; ++s) {
    const Eigen::Matrix3d r = random_rotation(rng);
    const double scale = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    const Eigen::RowVector3d t(dist(rng), dist(rng), dist(rng));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> dst(moved_values.data() + s * n * 3,
                                                                              static_cast<Eigen::Index>(n), 3);
    dst = (scale * (pred.sample(s) * r.transpose())).rowwise() + t;
  }
  const double base = metrics::p_mpjpe(pred, gt);
  const double moved = metrics::p_mpjpe(metrics::PoseSet(samples, n, moved_values), gt);
  out.push_back(make_result("invariants", "procrustes.similarity_invariance", std::abs(base - moved), 1e-6));

  // PCK / AUC boundaries on exactly representable errors: integer coordinates
  // plus an offset along x keep every distance exact.
  std::vector<double> grid_values = gt_values;
  for (auto& v : grid_values) v = std::round(v);
  const metrics::PoseSet grid(samples, n, grid_values);
  auto offset_set = [&](double mm) {
    std::vector<double> v = grid_values;
    for (std::size_t i = 0; i < v.size(); i += 3) v[i] += mm;
    return metrics::PoseSet(samples, n, std::move(v));
  };
  const double pck_at_threshold = metrics::pck(offset_set(150.0), grid, 150.0);
  const double pck_below = metrics::pck(offset_set(149.5), grid, 150.0);
  const double pck_exact = metrics::pck(grid, grid, 150.0);
  const double auc_exact = metrics::auc(grid, grid);
  const double auc_75 = metrics::auc(offset_set(75.0), grid);
  const double auc_far = metrics::auc(offset_set(1000.0), grid);
  out.push_back(make_result("invariants", "pck.strict_at_threshold", std::abs(pck_at_threshold - 0.0), 0.0));
  out.push_back(make_result("invariants", "pck.below_threshold", std::abs(pck_below - 100.0), 0.0));
  out.push_back(make_result("invariants", "pck.perfect_prediction", std::abs(pck_exact - 100.0), 0.0));
  out.push_back(make_result("invariants", "auc.perfect_prediction", std::abs(auc_exact - 100.0), 1e-12));
  out.push_back(make_result("invariants", "auc.error_75mm", std::abs(auc_75 - 50.0), 1e-12));
  out.push_back(make_result("invariants", "auc.far_prediction", std::abs(auc_far), 0.0));
}

}  // namespace

std::vector<CheckResult> gradient_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  GradRunner g(out, seed);
  primitive_grads(g, rng);
  module_grads(g, rng, seed);
  end_to_end_grads(g, rng, seed);
  return out;
}

std::vector<CheckResult> invariant_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  adjacency_invariants(out);
  module_invariants(out, rng, seed);
  primitive_invariants(out, rng);
  metric_invariants(out, rng);
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

nlohmann::json to_json(const CheckResult& r) {
  return {{"suite", r.suite}, {"name", r.name},     {"value", r.value},
          {"threshold", r.threshold}, {"passed", r.passed}, {"detail", r.detail}};
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::size_t width = 10;
  for (const auto& r : results) width = std::max(width, r.name.size());
  std::ostringstream os;
  for (const auto& r : results) {
    os << std::left << std::setw(11) << r.suite << std::setw(static_cast<int>(width) + 2) << r.name << std::right
       << std::scientific << std::setprecision(3) << std::setw(11) << r.value << " <= " << std::setw(10) << r.threshold
       << "  " << (r.passed ? "PASS" : "FAIL");
    if (!r.passed && !r.detail.empty()) os << "  (" << r.detail << ")";
    os << '\n';
  }
  return os.str();
}

}  // namespace dcgct::verify
