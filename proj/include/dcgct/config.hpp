#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace dcgct {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Which constraint chains a layer contains. `double_chain` is the full block;
// the single-chain variants keep one module over all C channels plus the
// block-level norm and MLP.
enum class Variant { double_chain, lcm_only, gcm_only };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);

struct ModelConfig {
  std::size_t joints = 17;
  std::size_t layers = 3;
  std::size_t channels = 160;
  std::size_t local_channels = 32;    // C1, local-to-global chain
  std::size_t global_channels = 128;  // C2, global-to-local chain
  std::size_t heads = 8;
  std::size_t mlp_expansion = 4;
  std::size_t fim_reduction = 2;
  std::size_t lcm_expansion = 2;
  std::size_t frames = 1;               // T; 1 selects the single-frame embedding
  std::size_t sequence_channels = 1024;  // C_mu, used when frames > 1
  double dropout = 0.0;
  // The regression head predicts meters; forward() reports millimeters.
  double output_scale = 1000.0;
  Variant variant = Variant::double_chain;

  void validate() const;

  bool operator==(const ModelConfig&) const = default;

  // M=3, C=160, C1:C2 = 32:128, 8 heads, single frame.
  static ModelConfig paper();
  // Reference settings with a T-frame sequence front end (M=4 beyond 27 frames).
  static ModelConfig video(std::size_t frames);
};

nlohmann::json to_json(const ModelConfig& c);
// Missing fields keep their defaults; unknown fields are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace dcgct
