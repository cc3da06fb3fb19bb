#include "dcgct/config.hpp"

#include <set>

namespace dcgct {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::double_chain: return "double_chain";
    case Variant::lcm_only: return "lcm_only";
    case Variant::gcm_only: return "gcm_only";
  }
  return "double_chain";
}

Variant variant_from_string(std::string_view name) {
  if (name == "double_chain") return Variant::double_chain;
  if (name == "lcm_only") return Variant::lcm_only;
  if (name == "gcm_only") return Variant::gcm_only;
  throw ConfigError("unknown model variant '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid model config: " + what);
  };
  require(joints >= 1, "joints must be >= 1");
  require(layers >= 1, "layers must be >= 1");
  require(channels >= 1, "channels must be >= 1");
  require(heads >= 1, "heads must be >= 1");
  require(mlp_expansion >= 1 && lcm_expansion >= 1, "expansion factors must be >= 1");
  require(fim_reduction >= 1 && channels % fim_reduction == 0, "fim_reduction must divide channels");
  require(frames >= 1 && frames % 2 == 1, "frames must be odd and >= 1");
  require(frames == 1 || sequence_channels >= 1, "sequence_channels must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(output_scale > 0.0, "output_scale must be positive");
  if (variant == Variant::double_chain) {
    require(local_channels >= 1 && global_channels >= 1, "chain widths must be >= 1");
    require(local_channels + global_channels == channels, "local_channels + global_channels must equal channels");
    require(local_channels % heads == 0 && global_channels % heads == 0, "heads must divide both chain widths");
  } else if (variant == Variant::gcm_only) {
    require(channels % heads == 0, "heads must divide channels");
  }
}

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::video(std::size_t frames) {
  ModelConfig c;
  c.frames = frames;
  c.layers = frames > 27 ? 4 : 3;
  return c;
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"joints", c.joints},
          {"layers", c.layers},
          {"channels", c.channels},
          {"local_channels", c.local_channels},
          {"global_channels", c.global_channels},
          {"heads", c.heads},
          {"mlp_expansion", c.mlp_expansion},
          {"fim_reduction", c.fim_reduction},
          {"lcm_expansion", c.lcm_expansion},
          {"frames", c.frames},
          {"sequence_channels", c.sequence_channels},
          {"dropout", c.dropout},
          {"output_scale", c.output_scale},
          {"variant", std::string(to_string(c.variant))}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known = {
      "joints",        "layers",        "channels", "local_channels", "global_channels", "heads",        "mlp_expansion",
      "fim_reduction", "lcm_expansion", "frames",   "sequence_channels", "dropout",       "output_scale", "variant"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config field '" + key + "'");
  }
  ModelConfig c;
  try {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("joints", c.joints);
    take("layers", c.layers);
    take("channels", c.channels);
    take("local_channels", c.local_channels);
    take("global_channels", c.global_channels);
    take("heads", c.heads);
    take("mlp_expansion", c.mlp_expansion);
    take("fim_reduction", c.fim_reduction);
    take("lcm_expansion", c.lcm_expansion);
    take("frames", c.frames);
    take("sequence_channels", c.sequence_channels);
    take("dropout", c.dropout);
    take("output_scale", c.output_scale);
    if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace dcgct
