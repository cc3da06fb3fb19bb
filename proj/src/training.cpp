#include "dcgct/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "dcgct/checkpoint.hpp"
#include "dcgct/metrics.hpp"
#include "dcgct/ops.hpp"

namespace dcgct::train {

void TrainConfig::validate(std::size_t joints) const {
  if (epochs == 0) throw TrainingError("epochs must be positive");
  if (batch_size == 0) throw TrainingError("batch_size must be positive");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw TrainingError("lr0 must be a positive finite number");
  if (!(per_epoch_decay > 0.0 && per_epoch_decay <= 1.0)) throw TrainingError("per_epoch_decay must lie in (0, 1]");
  if (!(five_epoch_decay > 0.0 && five_epoch_decay <= 1.0)) throw TrainingError("five_epoch_decay must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw TrainingError("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw TrainingError("adam_eps must be positive");
  if (!joint_weights.empty()) {
    if (joint_weights.size() != joints) {
      throw TrainingError("joint weight profile has " + std::to_string(joint_weights.size()) + " entries, expected " +
                          std::to_string(joints));
    }
    for (double w : joint_weights) {
      if (!(w > 0.0) || !std::isfinite(w)) throw TrainingError("joint weights must be positive finite numbers");
    }
  }
}

std::vector<double> TrainConfig::weights_for(std::size_t joints) const {
  if (joint_weights.empty()) return std::vector<double>(joints, 1.0);
  validate(joints);
  return joint_weights;
}

TrainConfig TrainConfig::defaults_for(const ModelConfig& model) {
  TrainConfig c;
  c.lr0 = model.frames > 1 ? 1e-3 : 5e-4;
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"per_epoch_decay", c.per_epoch_decay},
          {"five_epoch_decay", c.five_epoch_decay},
          {"joint_weights", c.joint_weights},
          {"flip_augment", c.flip_augment},
          {"seed", c.seed},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults) {
  if (!j.is_object()) throw TrainingError("training config must be a JSON object");
  TrainConfig c = defaults;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lr0") c.lr0 = value.get<double>();
      else if (key == "per_epoch_decay") c.per_epoch_decay = value.get<double>();
      else if (key == "five_epoch_decay") c.five_epoch_decay = value.get<double>();
      else if (key == "joint_weights") c.joint_weights = value.get<std::vector<double>>();
      else if (key == "flip_augment") c.flip_augment = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else throw TrainingError("unknown training config key: " + key);
    } catch (const nlohmann::json::exception& e) {
      throw TrainingError("training config key " + key + ": " + e.what());
    }
  }
  return c;
}

std::vector<double> load_joint_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TrainingError("cannot open joint weight file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.is_object()) j = j.at("weights");
    return j.get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError("invalid joint weight file " + path.string() + ": " + e.what());
  }
}

template <typename S>
ad::Tensor<S> weighted_pose_loss(const ad::Tensor<S>& pred, const ad::Tensor<S>& target,
                                 std::span<const double> weights) {
  if (pred.shape() != target.shape() || pred.rank() != 3 || pred.extent(-1) != 3) {
    throw ad::ShapeError("weighted_pose_loss: expected matching [B,N,3] tensors, got " + ad::to_string(pred.shape()) +
                         " and " + ad::to_string(target.shape()));
  }
  const std::size_t joints = pred.extent(1);
  if (weights.size() != joints) throw ad::ShapeError("weighted_pose_loss: weight count does not match joints");
  const auto diff = ad::sub(pred, target);
  const auto dist = ad::sqrt(ad::sum_last(ad::mul(diff, diff)));
  const ad::Tensor<S> w(ad::Shape{joints}, std::vector<S>(weights.begin(), weights.end()));
  return ad::mean(ad::mul(dist, w));
}

template ad::Tensor<float> weighted_pose_loss<float>(const ad::Tensor<float>&, const ad::Tensor<float>&,
                                                     std::span<const double>);
template ad::Tensor<double> weighted_pose_loss<double>(const ad::Tensor<double>&, const ad::Tensor<double>&,
                                                       std::span<const double>);

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  const double e = static_cast<double>(epoch);
  return cfg.lr0 * std::pow(cfg.per_epoch_decay, e) * std::pow(cfg.five_epoch_decay, static_cast<double>(epoch / 5));
}

OptimizerState OptimizerState::for_parameters(std::span<const ad::Tensor<float>> params, const TrainConfig& cfg) {
  OptimizerState st;
  st.beta1 = cfg.beta1;
  st.beta2 = cfg.beta2;
  st.eps = cfg.adam_eps;
  for (const auto& p : params) {
    st.first_moment.emplace_back(p.size(), 0.0f);
    st.second_moment.emplace_back(p.size(), 0.0f);
  }
  return st;
}

void optimizer_step(std::span<ad::Tensor<float>> params, OptimizerState& state, double lr) {
  if (params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
    throw TrainingError("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw TrainingError("missing gradient for parameter " + std::to_string(i));
    if (state.first_moment[i].size() != params[i].size()) throw TrainingError("optimizer moment size mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      p[k] = static_cast<float>(p[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + state.eps));
    }
  }
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"train_loss", r.train_loss},
          {"val_mpjpe_mm", r.val_mpjpe_mm},
          {"wall_ms", r.wall_ms}};
}

std::size_t worker_count() {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DCGCT_THREADS")) {
    char* end = nullptr;
    const long requested = std::strtol(env, &end, 10);
    if (end != env && requested > 0) n = static_cast<std::size_t>(requested);
  }
  return n;
}

std::vector<float> predict(const model::Model<float>& model, const data::Dataset& dataset, std::size_t batch_size) {
  if (batch_size == 0) throw TrainingError("batch size must be positive");
  if (dataset.empty()) return {};
  if (dataset.joints != model.config().joints || dataset.frames != model.config().frames) {
    throw TrainingError("dataset shape (" + std::to_string(dataset.frames) + " frames, " +
                        std::to_string(dataset.joints) + " joints) does not match the model (" +
                        std::to_string(model.config().frames) + " frames, " +
                        std::to_string(model.config().joints) + " joints)");
  }
  const std::size_t per_sample = dataset.joints * 3;
  std::vector<float> out(dataset.size() * per_sample);
  const std::size_t batches = (dataset.size() + batch_size - 1) / batch_size;
  const std::size_t workers = std::min(worker_count(), batches);

  // Each batch writes its own slice of `out`, so results do not depend on scheduling.
  auto run = [&](std::size_t worker) {
    ad::NoTapeScope<float> no_tape;
    for (std::size_t b = worker; b < batches; b += workers) {
      const std::size_t begin = b * batch_size;
      const std::size_t end = std::min(dataset.size(), begin + batch_size);
      std::vector<std::size_t> idx(end - begin);
      std::iota(idx.begin(), idx.end(), begin);
      const auto y = model.forward(data::batch_inputs<float>(dataset, idx), {ad::Mode::eval, nullptr});
      std::copy(y.data().begin(), y.data().end(), out.begin() + static_cast<long>(begin * per_sample));
    }
  };
  if (workers <= 1) {
    run(0);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        run(w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double dataset_mpjpe(const model::Model<float>& model, const data::Dataset& dataset) {
  if (dataset.empty()) throw TrainingError("cannot evaluate an empty dataset");
  const auto pred = predict(model, dataset);
  std::vector<double> gt;
  gt.reserve(pred.size());
  for (const auto& s : dataset.samples) gt.insert(gt.end(), s.target3d_mm.begin(), s.target3d_mm.end());
  return metrics::mpjpe(metrics::PoseSet::from<float>(dataset.size(), dataset.joints, pred),
                        metrics::PoseSet(dataset.size(), dataset.joints, std::move(gt)));
}

TrainReport train(model::Model<float>& model, const data::Dataset& train_set, const data::Dataset* val,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  const std::size_t joints = model.config().joints;
  cfg.validate(joints);
  if (train_set.empty()) throw TrainingError("training set is empty");
  if (train_set.joints != joints || train_set.frames != model.config().frames) {
    throw TrainingError("training set shape (" + std::to_string(train_set.frames) + " frames, " +
                        std::to_string(train_set.joints) + " joints) does not match the model (" +
                        std::to_string(model.config().frames) + " frames, " + std::to_string(joints) + " joints)");
  }
  const data::Dataset& val_set = (val != nullptr && !val->empty()) ? *val : train_set;
  const auto weights = cfg.weights_for(joints);

  std::vector<ad::Tensor<float>> params;
  for (auto& [name, t] : model.named_parameters()) params.push_back(t);
  OptimizerState state = OptimizerState::for_parameters(params, cfg);

  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::bernoulli_distribution coin(0.5);
  const std::size_t in_stride = train_set.frames * joints * 2;
  const std::size_t out_stride = joints * 3;

  TrainReport report;
  report.best_val_mpjpe_mm = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      auto x = data::batch_inputs<float>(train_set, idx);
      auto y = data::batch_targets<float>(train_set, idx);
      if (cfg.flip_augment) {
        for (std::size_t b = 0; b < idx.size(); ++b) {
          if (!coin(rng)) continue;
          graph::flip_pose_inplace(x.data().subspan(b * in_stride, in_stride), 2, model.topology());
          graph::flip_pose_inplace(y.data().subspan(b * out_stride, out_stride), 3, model.topology());
        }
      }
      for (auto& p : params) p.zero_grad();
      ad::Tape<float> tape;
      float loss_value = 0.0f;
      {
        ad::TapeScope<float> scope(tape);
        const auto pred = model.forward(x, {ad::Mode::train, &dropout_rng});
        const auto loss = weighted_pose_loss(pred, y, weights);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw NumericalAbort("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index));
        }
        tape.backward(loss);
      }
      optimizer_step(params, state, lr);
      loss_sum += static_cast<double>(loss_value) * static_cast<double>(idx.size());
    }

    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    record.val_mpjpe_mm = dataset_mpjpe(model, val_set);
    record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    report.epochs.push_back(record);
    if (record.val_mpjpe_mm < report.best_val_mpjpe_mm) {
      report.best_val_mpjpe_mm = record.val_mpjpe_mm;
      report.best_epoch = epoch;
      if (hooks.best_checkpoint) save_checkpoint(*hooks.best_checkpoint, model, &state, &cfg);
    }
    if (hooks.last_checkpoint) save_checkpoint(*hooks.last_checkpoint, model, &state, &cfg);
    if (hooks.on_epoch) hooks.on_epoch(record);
  }
  return report;
}

}  // namespace dcgct::train
