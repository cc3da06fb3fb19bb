#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcgct/model.hpp"
#include "dcgct/training.hpp"

// File layout: 8-byte magic "DCGCTCKP", little-endian uint64 header length,
// JSON header {format_version, config, topology, train_config?, optimizer?,
// tensors: [{name, shape, offset}], blob_bytes}, then the little-endian
// float32 blob. Offsets are byte offsets into the blob.
namespace dcgct::train {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointTensor {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  ModelConfig config;
  graph::SkeletonTopology topology;
  std::optional<TrainConfig> train_config;
  std::optional<OptimizerState> optimizer;  // moments filled in parameter order
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const model::Model<float>& model,
                     const OptimizerState* optimizer = nullptr, const TrainConfig* train_config = nullptr);

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Builds a model from the checkpoint's own config and topology.
model::Model<float> load_model(const Checkpoint& ckpt);

// Copies checkpoint values into an existing model; its config must match.
void restore_model(model::Model<float>& model, const Checkpoint& ckpt);

}  // namespace dcgct::train
