#include "dcgct/model.hpp"

#include <cmath>

namespace dcgct::model {

using ad::Shape;

namespace {

template <typename S>
Tensor<S> xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<S> values(fan_in * fan_out);
  for (S& v : values) v = static_cast<S>(dist(rng));
  return Tensor<S>(Shape{fan_in, fan_out}, std::move(values), true);
}

template <typename S>
Linear<S> make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Linear<S>{xavier<S>(in, out, rng), Tensor<S>::zeros(Shape{out}, true)};
}

template <typename S>
Affine<S> make_affine(std::size_t channels) {
  return Affine<S>{Tensor<S>::full(Shape{channels}, S(1), true), Tensor<S>::zeros(Shape{channels}, true)};
}

template <typename S>
LcmParams<S> make_lcm(std::size_t channels, std::size_t expansion, std::mt19937_64& rng) {
  LcmParams<S> p;
  p.entry_norm = make_affine<S>(channels);
  const std::size_t wide = channels * expansion;
  for (auto& stage : p.stages) {
    for (auto& w : stage.filters) w = xavier<S>(channels, wide, rng);
    stage.bias = Tensor<S>::zeros(Shape{wide}, true);
    stage.norm = BatchNorm<S>{make_affine<S>(wide), std::make_shared<ad::RunningStats<S>>()};
    stage.conv = make_linear<S>(wide, channels, rng);
  }
  return p;
}

template <typename S>
GcmParams<S> make_gcm(std::size_t channels, std::mt19937_64& rng) {
  GcmParams<S> p;
  p.query = make_linear<S>(channels, channels, rng);
  p.key = make_linear<S>(channels, channels, rng);
  p.value = make_linear<S>(channels, channels, rng);
  p.out = make_linear<S>(channels, channels, rng);
  return p;
}

template <typename S>
using Visitor = std::function<void(const std::string&, const Tensor<S>&)>;

template <typename S>
void visit(const std::string& prefix, const Linear<S>& l, const Visitor<S>& fn) {
  fn(prefix + ".weight", l.weight);
  fn(prefix + ".bias", l.bias);
}

template <typename S>
void visit(const std::string& prefix, const Affine<S>& a, const Visitor<S>& fn) {
  fn(prefix + ".gamma", a.gamma);
  fn(prefix + ".beta", a.beta);
}

template <typename S>
void visit(const std::string& prefix, const LcmParams<S>& p, const Visitor<S>& fn) {
  visit(prefix + ".entry_norm", p.entry_norm, fn);
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const auto& stage = p.stages[s];
    const std::string sp = prefix + ".stages." + std::to_string(s);
    for (std::size_t k = 0; k < graph::kCategoryCount; ++k) {
      fn(sp + ".filters." + std::string(graph::kCategoryNames[k]), stage.filters[k]);
    }
    fn(sp + ".bias", stage.bias);
    visit(sp + ".norm", stage.norm.affine, fn);
    visit(sp + ".conv", stage.conv, fn);
  }
}

template <typename S>
void visit(const std::string& prefix, const GcmParams<S>& p, const Visitor<S>& fn) {
  visit(prefix + ".query", p.query, fn);
  visit(prefix + ".key", p.key, fn);
  visit(prefix + ".value", p.value, fn);
  visit(prefix + ".out", p.out, fn);
}

template <typename S>
void visit(const std::string& prefix, const FimParams<S>& p, const Visitor<S>& fn) {
  visit(prefix + ".reduce", p.reduce, fn);
  visit(prefix + ".expand", p.expand, fn);
}

template <typename S, typename T>
void visit_optional(const std::string& prefix, const std::optional<T>& p, const Visitor<S>& fn) {
  if (p) visit(prefix, *p, fn);
}

template <typename S>
void check_shape(const Tensor<S>& x, std::size_t rank, const std::string& what) {
  if (x.rank() != rank) {
    throw ad::ShapeError(what + ": expected rank " + std::to_string(rank) + ", got " + ad::to_string(x.shape()));
  }
}

}  // namespace

template <typename S>
AdjacencyTensors<S> make_adjacency_tensors(const graph::AdjacencySet& adjacency) {
  AdjacencyTensors<S> out;
  out.joints = adjacency.joint_count();
  for (std::size_t k = 0; k < graph::kCategoryCount; ++k) {
    const auto& m = adjacency.normalized[k];
    std::vector<S> values(m.values.begin(), m.values.end());
    out.matrices[k] = Tensor<S>(Shape{m.n, m.n}, std::move(values));
  }
  return out;
}

template <typename S>
void for_each_parameter(const ModelParams<S>& params, const Visitor<S>& fn) {
  const auto& e = params.embedding;
  visit_optional<S>("embedding.joint", e.joint, fn);
  visit_optional<S>("embedding.sequence", e.sequence, fn);
  visit_optional<S>("embedding.mid_frame", e.mid_frame, fn);
  visit_optional<S>("embedding.fuse", e.fuse, fn);
  fn("embedding.position", e.position);
  for (std::size_t m = 0; m < params.blocks.size(); ++m) {
    const auto& b = params.blocks[m];
    const std::string prefix = "blocks." + std::to_string(m);
    visit_optional<S>(prefix + ".l2g_local", b.l2g_local, fn);
    visit_optional<S>(prefix + ".l2g_global", b.l2g_global, fn);
    visit_optional<S>(prefix + ".fim", b.fim, fn);
    visit_optional<S>(prefix + ".g2l_global", b.g2l_global, fn);
    visit_optional<S>(prefix + ".g2l_local", b.g2l_local, fn);
    visit(prefix + ".norm", b.norm, fn);
    visit(prefix + ".mlp_in", b.mlp_in, fn);
    visit(prefix + ".mlp_out", b.mlp_out, fn);
  }
  visit("head.norm", params.head.norm, fn);
  visit("head.proj", params.head.proj, fn);
}

template <typename S>
void for_each_running_stats(const ModelParams<S>& params,
                            const std::function<void(const std::string&, ad::RunningStats<S>&)>& fn) {
  auto lcm = [&](const std::string& prefix, const std::optional<LcmParams<S>>& p) {
    if (!p) return;
    for (std::size_t s = 0; s < p->stages.size(); ++s) {
      fn(prefix + ".stages." + std::to_string(s) + ".norm", *p->stages[s].norm.stats);
    }
  };
  for (std::size_t m = 0; m < params.blocks.size(); ++m) {
    const std::string prefix = "blocks." + std::to_string(m);
    lcm(prefix + ".l2g_local", params.blocks[m].l2g_local);
    lcm(prefix + ".g2l_local", params.blocks[m].g2l_local);
  }
}

template <typename S>
ModelParams<S> init_params(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t c = config.channels;
  ModelParams<S> p;
  if (config.frames == 1) {
    p.embedding.joint = make_linear<S>(2, c, rng);
  } else {
    p.embedding.sequence = make_linear<S>(2 * config.frames, config.sequence_channels, rng);
    p.embedding.mid_frame = make_linear<S>(2, c, rng);
    p.embedding.fuse = make_linear<S>(config.sequence_channels + c, c, rng);
  }
  {
    std::normal_distribution<double> dist(0.0, 0.02);
    std::vector<S> values(config.joints * c);
    for (S& v : values) v = static_cast<S>(dist(rng));
    p.embedding.position = Tensor<S>(Shape{config.joints, c}, std::move(values), true);
  }
  for (std::size_t m = 0; m < config.layers; ++m) {
    BlockParams<S> b;
    switch (config.variant) {
      case Variant::double_chain:
        b.l2g_local = make_lcm<S>(config.local_channels, config.lcm_expansion, rng);
        b.l2g_global = make_gcm<S>(config.local_channels, rng);
        b.fim = FimParams<S>{make_linear<S>(c, c / config.fim_reduction, rng),
                             make_linear<S>(c / config.fim_reduction, c, rng)};
        b.g2l_global = make_gcm<S>(config.global_channels, rng);
        b.g2l_local = make_lcm<S>(config.global_channels, config.lcm_expansion, rng);
        break;
      case Variant::lcm_only: b.l2g_local = make_lcm<S>(c, config.lcm_expansion, rng); break;
      case Variant::gcm_only: b.g2l_global = make_gcm<S>(c, rng); break;
    }
    b.norm = make_affine<S>(c);
    b.mlp_in = make_linear<S>(c, c * config.mlp_expansion, rng);
    b.mlp_out = make_linear<S>(c * config.mlp_expansion, c, rng);
    p.blocks.push_back(std::move(b));
  }
  p.head.norm = make_affine<S>(c);
  p.head.proj = make_linear<S>(c, 3, rng);
  return p;
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Linear<S>& layer) {
  return ad::add(ad::matmul(x, layer.weight), layer.bias);
}

template <typename S>
Tensor<S> joint_embedding(const Tensor<S>& x2d, const EmbeddingParams<S>& params, const ModelConfig& config) {
  check_shape(x2d, 3, "joint_embedding");
  if (x2d.extent(1) != config.joints || x2d.extent(2) != 2) {
    throw ad::ShapeError("joint_embedding: wrong joint count, expected [B," + std::to_string(config.joints) +
                         ",2], got " + ad::to_string(x2d.shape()));
  }
  if (!params.joint) throw std::logic_error("joint_embedding: model was built for sequence input");
  return ad::add(linear(x2d, *params.joint), params.position);
}

template <typename S>
Tensor<S> sequence_embedding(const Tensor<S>& x_seq, const EmbeddingParams<S>& params, const ModelConfig& config) {
  check_shape(x_seq, 4, "sequence_embedding");
  const std::size_t frames = x_seq.extent(1);
  if (frames % 2 == 0) throw ad::ShapeError("sequence_embedding: frame count must be odd");
  if (frames != config.frames) {
    throw ad::ShapeError("sequence_embedding: expected " + std::to_string(config.frames) + " frames, got " +
                         std::to_string(frames));
  }
  if (x_seq.extent(2) != config.joints || x_seq.extent(3) != 2) {
    throw ad::ShapeError("sequence_embedding: wrong joint count, got " + ad::to_string(x_seq.shape()));
  }
  if (!params.sequence) throw std::logic_error("sequence_embedding: model was built for single-frame input");
  const std::size_t batch = x_seq.extent(0);
  // Per joint, the whole trajectory as one 2T vector (frame-major pairs).
  const Tensor<S> per_joint = ad::reshape(ad::swap_axes(x_seq, 1, 2), Shape{batch, config.joints, 2 * frames});
  const std::size_t mid = (frames - 1) / 2;
  const Tensor<S> middle = ad::split_channels(per_joint, {2 * mid, 2, 2 * mid})[1];

  const Tensor<S> sequence = linear(per_joint, *params.sequence);
  const Tensor<S> guide = linear(middle, *params.mid_frame);
  const Tensor<S> fused = linear(ad::concat_channels({sequence, guide}), *params.fuse);
  return ad::add(fused, params.position);
}

template <typename S>
Tensor<S> gcm_forward(const Tensor<S>& x, const GcmParams<S>& params, std::size_t heads) {
  check_shape(x, 3, "gcm_forward");
  const std::size_t width = x.extent(-1);
  if (heads == 0 || width % heads != 0) {
    throw ad::ShapeError("gcm_forward: " + std::to_string(heads) + " heads do not divide width " +
                         std::to_string(width));
  }
  const std::size_t head_dim = width / heads;
  const Tensor<S> q = linear(x, params.query);
  const Tensor<S> k = linear(x, params.key);
  const Tensor<S> v = linear(x, params.value);
  const std::vector<std::size_t> sizes(heads, head_dim);
  const auto qs = heads > 1 ? ad::split_channels(q, sizes) : std::vector<Tensor<S>>{q};
  const auto ks = heads > 1 ? ad::split_channels(k, sizes) : std::vector<Tensor<S>>{k};
  const auto vs = heads > 1 ? ad::split_channels(v, sizes) : std::vector<Tensor<S>>{v};
  const S inv_sqrt_dim = S(1) / std::sqrt(static_cast<S>(head_dim));
  std::vector<Tensor<S>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<S> scores = ad::scale(ad::matmul(qs[h], ad::transpose_last(ks[h])), inv_sqrt_dim);
    outputs.push_back(ad::matmul(ad::softmax_rows(scores), vs[h]));
  }
  const Tensor<S> merged = heads > 1 ? ad::concat_channels(std::span<const Tensor<S>>(outputs)) : outputs[0];
  return linear(merged, params.out);
}

template <typename S>
Tensor<S> lcm_forward(const Tensor<S>& x, const AdjacencyTensors<S>& adjacency, const LcmParams<S>& params,
                      Mode mode) {
  check_shape(x, 3, "lcm_forward");
  if (adjacency.joints != x.extent(1)) {
    throw ad::ShapeError("lcm_forward: adjacency size mismatch, " + std::to_string(adjacency.joints) + " vs " +
                         std::to_string(x.extent(1)) + " joints");
  }
  Tensor<S> h = ad::layer_norm(x, params.entry_norm.gamma, params.entry_norm.beta);
  for (const auto& stage : params.stages) {
    Tensor<S> acc;
    for (std::size_t k = 0; k < graph::kCategoryCount; ++k) {
      const Tensor<S> term = ad::matmul(adjacency.matrices[k], ad::matmul(h, stage.filters[k]));
      acc = acc.defined() ? ad::add(acc, term) : term;
    }
    acc = ad::add(acc, stage.bias);
    acc = ad::batch_norm(acc, stage.norm.affine.gamma, stage.norm.affine.beta, *stage.norm.stats, mode);
    h = linear(ad::gelu(acc), stage.conv);
  }
  return h;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> fim_forward(const Tensor<S>& local, const Tensor<S>& global,
                                            const FimParams<S>& params) {
  const std::size_t total = params.expand.weight.extent(1);
  if (local.extent(-1) + global.extent(-1) != total) {
    throw ad::ShapeError("fim_forward: channel mismatch, " + std::to_string(local.extent(-1)) + " + " +
                         std::to_string(global.extent(-1)) + " != " + std::to_string(total));
  }
  const Tensor<S> fused = linear(linear(ad::concat_channels({local, global}), params.reduce), params.expand);
  auto parts = ad::split_channels(fused, {local.extent(-1), global.extent(-1)});
  return {parts[0], parts[1]};
}

template <typename S>
Tensor<S> double_chain_block(const Tensor<S>& x, const BlockParams<S>& params, const AdjacencyTensors<S>& adjacency,
                             const ModelConfig& config, const ForwardOptions& options) {
  Tensor<S> merged;
  switch (config.variant) {
    case Variant::double_chain: {
      const auto chains = ad::split_channels(x, {config.local_channels, config.global_channels});
      const Tensor<S> l2g_local = lcm_forward(chains[0], adjacency, *params.l2g_local, options.mode);
      const Tensor<S> g2l_global = gcm_forward(chains[1], *params.g2l_global, config.heads);
      const auto [to_local, to_global] = fim_forward(l2g_local, g2l_global, *params.fim);
      const Tensor<S> l2g_fused = ad::add(l2g_local, to_local);
      const Tensor<S> g2l_fused = ad::add(g2l_global, to_global);
      const Tensor<S> l2g_global = gcm_forward(l2g_fused, *params.l2g_global, config.heads);
      const Tensor<S> g2l_local = lcm_forward(g2l_fused, adjacency, *params.g2l_local, options.mode);
      merged = ad::add(ad::concat_channels({l2g_global, g2l_local}), ad::concat_channels({l2g_local, g2l_global}));
      break;
    }
    case Variant::lcm_only: merged = lcm_forward(x, adjacency, *params.l2g_local, options.mode); break;
    case Variant::gcm_only: merged = gcm_forward(x, *params.g2l_global, config.heads); break;
  }
  Tensor<S> hidden = ad::gelu(linear(ad::layer_norm(merged, params.norm.gamma, params.norm.beta), params.mlp_in));
  if (options.mode == Mode::train && config.dropout > 0.0) {
    if (options.dropout_rng == nullptr) throw std::logic_error("dropout requires an RNG in train mode");
    hidden = ad::dropout(hidden, config.dropout, *options.dropout_rng);
  }
  return ad::add(linear(hidden, params.mlp_out), merged);
}

template <typename S>
Model<S>::Model(ModelConfig config, graph::SkeletonTopology topology, std::uint64_t seed)
    : config_(config), topology_(std::move(topology)) {
  config_.validate();
  topology_.validate();
  if (topology_.joint_count() != config_.joints) {
    throw ConfigError("config mismatch: model expects " + std::to_string(config_.joints) +
                      " joints but topology has " + std::to_string(topology_.joint_count()));
  }
  adjacency_ = make_adjacency_tensors<S>(graph::decompose_adjacency(topology_));
  std::mt19937_64 rng(seed);
  params_ = init_params<S>(config_, rng);
}

template <typename S>
Tensor<S> Model<S>::forward(const Tensor<S>& input, const ForwardOptions& options) const {
  const std::size_t expected_rank = config_.frames == 1 ? 3 : 4;
  if (input.rank() != expected_rank) {
    throw ad::ShapeError("forward: arity mismatch, model expects " +
                         std::string(config_.frames == 1 ? "[B,N,2]" : "[B,T,N,2]") + " input, got " +
                         ad::to_string(input.shape()));
  }
  Tensor<S> x = config_.frames == 1 ? joint_embedding(input, params_.embedding, config_)
                                    : sequence_embedding(input, params_.embedding, config_);
  for (const auto& block : params_.blocks) x = double_chain_block(x, block, adjacency_, config_, options);
  x = ad::layer_norm(x, params_.head.norm.gamma, params_.head.norm.beta);
  return ad::scale(linear(x, params_.head.proj), static_cast<S>(config_.output_scale));
}

template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> Model<S>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  for_each_parameter<S>(params_, [&](const std::string& name, const Tensor<S>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename S>
std::size_t Model<S>::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter<S>(params_, [&](const std::string&, const Tensor<S>& t) { n += t.size(); });
  return n;
}

namespace {

std::size_t linear_params(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t lcm_params(std::size_t c, std::size_t expansion) {
  const std::size_t wide = c * expansion;
  const std::size_t stage = graph::kCategoryCount * c * wide + wide + 2 * wide + linear_params(wide, c);
  return 2 * c + 2 * stage;
}

std::size_t gcm_params(std::size_t c) { return 4 * linear_params(c, c); }

}  // namespace

std::size_t count_params(const ModelConfig& config) {
  config.validate();
  const std::size_t c = config.channels;
  std::size_t embedding = config.joints * c;
  if (config.frames == 1) {
    embedding += linear_params(2, c);
  } else {
    embedding += linear_params(2 * config.frames, config.sequence_channels) + linear_params(2, c) +
                 linear_params(config.sequence_channels + c, c);
  }
  std::size_t layer = 2 * c + linear_params(c, c * config.mlp_expansion) + linear_params(c * config.mlp_expansion, c);
  switch (config.variant) {
    case Variant::double_chain:
      layer += lcm_params(config.local_channels, config.lcm_expansion) + gcm_params(config.local_channels) +
               linear_params(c, c / config.fim_reduction) + linear_params(c / config.fim_reduction, c) +
               gcm_params(config.global_channels) + lcm_params(config.global_channels, config.lcm_expansion);
      break;
    case Variant::lcm_only: layer += lcm_params(c, config.lcm_expansion); break;
    case Variant::gcm_only: layer += gcm_params(c); break;
  }
  const std::size_t head = 2 * c + linear_params(c, 3);
  return embedding + config.layers * layer + head;
}

std::uint64_t count_macs(const ModelConfig& config) {
  config.validate();
  const std::uint64_t n = config.joints, c = config.channels;
  auto lcm = [&](std::uint64_t width) {
    const std::uint64_t wide = width * config.lcm_expansion;
    const std::uint64_t filters = graph::kCategoryCount * n * width * wide;
    const std::uint64_t propagate = graph::kCategoryCount * n * n * wide;
    const std::uint64_t conv = n * wide * width;
    return 2 * (filters + propagate + conv);
  };
  auto gcm = [&](std::uint64_t width) {
    const std::uint64_t projections = 4 * n * width * width;
    const std::uint64_t attention = 2 * n * n * width;  // Q K^T and A V summed over heads
    return projections + attention;
  };
  std::uint64_t embedding = 0;
  if (config.frames == 1) {
    embedding = n * 2 * c;
  } else {
    const std::uint64_t t = config.frames, cmu = config.sequence_channels;
    embedding = n * (2 * t * cmu + 2 * c + (cmu + c) * c);
  }
  std::uint64_t layer = 2 * n * c * c * config.mlp_expansion;
  switch (config.variant) {
    case Variant::double_chain:
      layer += lcm(config.local_channels) + gcm(config.local_channels) + 2 * n * c * (c / config.fim_reduction) +
               gcm(config.global_channels) + lcm(config.global_channels);
      break;
    case Variant::lcm_only: layer += lcm(c); break;
    case Variant::gcm_only: layer += gcm(c); break;
  }
  const std::uint64_t head = n * c * 3;
  return embedding + config.layers * layer + head;
}

std::uint64_t count_flops(const ModelConfig& config) { return 2 * count_macs(config); }

#define DCGCT_INSTANTIATE_MODEL(S)                                                                                \
  template AdjacencyTensors<S> make_adjacency_tensors<S>(const graph::AdjacencySet&);                            \
  template void for_each_parameter<S>(const ModelParams<S>&, const Visitor<S>&);                                 \
  template void for_each_running_stats<S>(const ModelParams<S>&,                                                 \
                                          const std::function<void(const std::string&, ad::RunningStats<S>&)>&); \
  template ModelParams<S> init_params<S>(const ModelConfig&, std::mt19937_64&);                                  \
  template Tensor<S> linear<S>(const Tensor<S>&, const Linear<S>&);                                              \
  template Tensor<S> joint_embedding<S>(const Tensor<S>&, const EmbeddingParams<S>&, const ModelConfig&);        \
  template Tensor<S> sequence_embedding<S>(const Tensor<S>&, const EmbeddingParams<S>&, const ModelConfig&);     \
  template Tensor<S> gcm_forward<S>(const Tensor<S>&, const GcmParams<S>&, std::size_t);                         \
  template Tensor<S> lcm_forward<S>(const Tensor<S>&, const AdjacencyTensors<S>&, const LcmParams<S>&, Mode);    \
  template std::pair<Tensor<S>, Tensor<S>> fim_forward<S>(const Tensor<S>&, const Tensor<S>&,                    \
                                                          const FimParams<S>&);                                  \
  template Tensor<S> double_chain_block<S>(const Tensor<S>&, const BlockParams<S>&, const AdjacencyTensors<S>&,  \
                                           const ModelConfig&, const ForwardOptions&);                           \
  template class Model<S>;

DCGCT_INSTANTIATE_MODEL(float)
DCGCT_INSTANTIATE_MODEL(double)

}  // namespace dcgct::model
