#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcgct/dataset.hpp"
#include "dcgct/model.hpp"

namespace dcgct::train {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Loss became NaN/Inf; the diagnostic names the epoch and batch.
class NumericalAbort : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 512;
  double lr0 = 5e-4;
  double per_epoch_decay = 0.95;
  double five_epoch_decay = 0.5;
  std::vector<double> joint_weights;  // empty means all ones
  bool flip_augment = true;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate(std::size_t joints) const;
  std::vector<double> weights_for(std::size_t joints) const;

  bool operator==(const TrainConfig&) const = default;

  // lr0 = 1e-3 for sequence input, 5e-4 otherwise.
  static TrainConfig defaults_for(const ModelConfig& model);
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults = {});

// Joint weight profile: a JSON array of N positive reals, or {"weights": [...]}.
std::vector<double> load_joint_weights(const std::filesystem::path& path);

// Mean over the batch of (1/N) sum_i w_i ||pred_i - target_i||.
template <typename S>
ad::Tensor<S> weighted_pose_loss(const ad::Tensor<S>& pred, const ad::Tensor<S>& target,
                                 std::span<const double> weights);

// lr0 * per_epoch_decay^e * five_epoch_decay^floor(e/5)
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_parameters(std::span<const ad::Tensor<float>> params, const TrainConfig& cfg);
};

// Bias-corrected adaptive-moment update. Throws if any parameter lacks a grad.
void optimizer_step(std::span<ad::Tensor<float>> params, OptimizerState& state, double lr);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_mpjpe_mm = 0.0;
  double wall_ms = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double best_val_mpjpe_mm = 0.0;
  std::size_t best_epoch = 0;
};

struct TrainHooks {
  std::optional<std::filesystem::path> best_checkpoint;
  std::optional<std::filesystem::path> last_checkpoint;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Predictions in millimeters for every sample, evaluated in batches of
// `batch_size` in eval mode. Batches run on DCGCT_THREADS workers (default:
// the hardware thread count).
std::vector<float> predict(const model::Model<float>& model, const data::Dataset& dataset, std::size_t batch_size = 256);

double dataset_mpjpe(const model::Model<float>& model, const data::Dataset& dataset);

// Seeded shuffling, optional flip augmentation, Adam updates and the epoch
// learning-rate schedule. Validation falls back to the training set when
// `val` is null or empty.
TrainReport train(model::Model<float>& model, const data::Dataset& train_set, const data::Dataset* val,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

std::size_t worker_count();

}  // namespace dcgct::train
