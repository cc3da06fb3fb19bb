#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dcgct/config.hpp"
#include "dcgct/ops.hpp"
#include "dcgct/skeleton.hpp"
#include "dcgct/tensor.hpp"

namespace dcgct::model {

using ad::Mode;
using ad::Tensor;

// y = x W + b with W stored [in, out].
template <typename S>
struct Linear {
  Tensor<S> weight;
  Tensor<S> bias;
};

template <typename S>
struct Affine {
  Tensor<S> gamma;
  Tensor<S> beta;
};

template <typename S>
struct BatchNorm {
  Affine<S> affine;
  std::shared_ptr<ad::RunningStats<S>> stats;
};

// One GCN block (four category filters, expanding the width) followed by
// batch norm, GELU and the pointwise conv projecting back.
template <typename S>
struct GcnStage {
  std::array<Tensor<S>, graph::kCategoryCount> filters;
  Tensor<S> bias;
  BatchNorm<S> norm;
  Linear<S> conv;
};

template <typename S>
struct LcmParams {
  Affine<S> entry_norm;
  std::array<GcnStage<S>, 2> stages;
};

template <typename S>
struct GcmParams {
  Linear<S> query, key, value, out;
};

template <typename S>
struct FimParams {
  Linear<S> reduce, expand;
};

// Double-chain layer. Single-chain variants populate only `l2g_local`
// (lcm_only) or `g2l_global` (gcm_only), sized to the full width.
template <typename S>
struct BlockParams {
  std::optional<LcmParams<S>> l2g_local;
  std::optional<GcmParams<S>> l2g_global;
  std::optional<FimParams<S>> fim;
  std::optional<GcmParams<S>> g2l_global;
  std::optional<LcmParams<S>> g2l_local;
  Affine<S> norm;
  Linear<S> mlp_in, mlp_out;
};

template <typename S>
struct EmbeddingParams {
  std::optional<Linear<S>> joint;     // single frame: 2 -> C
  std::optional<Linear<S>> sequence;  // 2T -> C_mu
  std::optional<Linear<S>> mid_frame; // 2 -> C
  std::optional<Linear<S>> fuse;      // C_mu + C -> C
  Tensor<S> position;                 // N x C
};

template <typename S>
struct HeadParams {
  Affine<S> norm;
  Linear<S> proj;
};

template <typename S>
struct ModelParams {
  EmbeddingParams<S> embedding;
  std::vector<BlockParams<S>> blocks;
  HeadParams<S> head;
};

// Normalized category matrices as constant tensors.
template <typename S>
struct AdjacencyTensors {
  std::array<Tensor<S>, graph::kCategoryCount> matrices;
  std::size_t joints = 0;
};

template <typename S>
AdjacencyTensors<S> make_adjacency_tensors(const graph::AdjacencySet& adjacency);

// Visits every learnable tensor in a fixed order with a stable name.
template <typename S>
void for_each_parameter(const ModelParams<S>& params, const std::function<void(const std::string&, const Tensor<S>&)>& fn);

template <typename S>
void for_each_running_stats(const ModelParams<S>& params,
                            const std::function<void(const std::string&, ad::RunningStats<S>&)>& fn);

// Xavier-uniform projections, N(0, 0.02^2) position table, zero biases and
// unit/zero norm affines, all drawn from `rng` in a fixed order.
template <typename S>
ModelParams<S> init_params(const ModelConfig& config, std::mt19937_64& rng);

// Building blocks. Inputs are [B, N, C] unless noted.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Linear<S>& layer);

template <typename S>
Tensor<S> joint_embedding(const Tensor<S>& x2d, const EmbeddingParams<S>& params, const ModelConfig& config);

// x_seq is [B, T, N, 2].
template <typename S>
Tensor<S> sequence_embedding(const Tensor<S>& x_seq, const EmbeddingParams<S>& params, const ModelConfig& config);

template <typename S>
Tensor<S> gcm_forward(const Tensor<S>& x, const GcmParams<S>& params, std::size_t heads);

template <typename S>
Tensor<S> lcm_forward(const Tensor<S>& x, const AdjacencyTensors<S>& adjacency, const LcmParams<S>& params, Mode mode);

template <typename S>
std::pair<Tensor<S>, Tensor<S>> fim_forward(const Tensor<S>& local, const Tensor<S>& global, const FimParams<S>& params);

struct ForwardOptions {
  Mode mode = Mode::eval;
  std::mt19937_64* dropout_rng = nullptr;  // required only when dropout > 0 in train mode
};

template <typename S>
Tensor<S> double_chain_block(const Tensor<S>& x, const BlockParams<S>& params, const AdjacencyTensors<S>& adjacency,
                             const ModelConfig& config, const ForwardOptions& options);

template <typename S>
class Model {
 public:
  Model(ModelConfig config, graph::SkeletonTopology topology, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const graph::SkeletonTopology& topology() const { return topology_; }
  const AdjacencyTensors<S>& adjacency() const { return adjacency_; }
  ModelParams<S>& params() { return params_; }
  const ModelParams<S>& params() const { return params_; }

  // [B, N, 2] (single frame) or [B, T, N, 2] -> [B, N, 3] millimeters.
  Tensor<S> forward(const Tensor<S>& input, const ForwardOptions& options = {}) const;

  std::vector<std::pair<std::string, Tensor<S>>> named_parameters() const;
  std::size_t parameter_count() const;

  // Same architecture with every parameter and running statistic converted.
  template <typename D>
  Model<D> cast() const;

 private:
  ModelConfig config_;
  graph::SkeletonTopology topology_;
  AdjacencyTensors<S> adjacency_;
  ModelParams<S> params_;
};

// Analytic learnable-scalar count from the config alone.
std::size_t count_params(const ModelConfig& config);

// Analytic multiply-accumulate count for one forward pass with B = 1.
std::uint64_t count_macs(const ModelConfig& config);

// Floating-point operations, counting each multiply-accumulate as two.
std::uint64_t count_flops(const ModelConfig& config);

template <typename S>
template <typename D>
Model<D> Model<S>::cast() const {
  Model<D> out(config_, topology_, 0);
  auto src = named_parameters();
  auto dst = out.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].second.data();
    auto to = dst[i].second.data();
    for (std::size_t k = 0; k < from.size(); ++k) to[k] = static_cast<D>(from[k]);
  }
  std::vector<ad::RunningStats<S>*> src_stats;
  for_each_running_stats<S>(params_, [&](const std::string&, ad::RunningStats<S>& s) { src_stats.push_back(&s); });
  std::size_t idx = 0;
  for_each_running_stats<D>(out.params(), [&](const std::string&, ad::RunningStats<D>& s) {
    const auto& from = *src_stats[idx++];
    s.ready = from.ready;
    s.momentum = from.momentum;
    s.mean.assign(from.mean.begin(), from.mean.end());
    s.var.assign(from.var.begin(), from.var.end());
  });
  return out;
}

}  // namespace dcgct::model
