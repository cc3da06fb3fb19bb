#include "dcgct/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dcgct::train {

namespace {

constexpr char kMagic[8] = {'D', 'C', 'G', 'C', 'T', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void append_tensor(std::vector<CheckpointTensor>& out, std::string name, ad::Shape shape,
                   std::span<const float> values) {
  out.push_back(CheckpointTensor{std::move(name), std::move(shape), std::vector<float>(values.begin(), values.end())});
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const model::Model<float>& model,
                     const OptimizerState* optimizer, const TrainConfig* train_config) {
  std::vector<CheckpointTensor> tensors;
  const auto params = model.named_parameters();
  for (const auto& [name, t] : params) append_tensor(tensors, "param/" + name, t.shape(), t.data());
  model::for_each_running_stats<float>(model.params(), [&](const std::string& name, ad::RunningStats<float>& s) {
    if (!s.ready) return;
    append_tensor(tensors, "stats/" + name + "/mean", ad::Shape{s.mean.size()}, s.mean);
    append_tensor(tensors, "stats/" + name + "/var", ad::Shape{s.var.size()}, s.var);
  });
  if (optimizer != nullptr) {
    if (optimizer->first_moment.size() != params.size()) {
      throw CheckpointError("optimizer state does not match the model's parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      append_tensor(tensors, "adam_m/" + params[i].first, params[i].second.shape(), optimizer->first_moment[i]);
      append_tensor(tensors, "adam_v/" + params[i].first, params[i].second.shape(), optimizer->second_moment[i]);
    }
  }

  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size() * sizeof(float);
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"config", to_json(model.config())},
                           {"topology", graph::to_json(model.topology())},
                           {"tensors", manifest},
                           {"blob_bytes", offset}};
  if (train_config != nullptr) header["train_config"] = to_json(*train_config);
  if (optimizer != nullptr) {
    header["optimizer"] = {
        {"step", optimizer->step}, {"beta1", optimizer->beta1}, {"beta2", optimizer->beta2}, {"eps", optimizer->eps}};
  }
  const std::string text = header.dump();

  // Write to a sibling file first so a crash never leaves a half-written checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    const std::uint64_t header_len = text.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors) {
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8] = {};
  std::uint64_t header_len = 0;
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic)) throw CheckpointError("truncated checkpoint");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint file: bad magic");
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (in.gcount() != sizeof(header_len)) throw CheckpointError("truncated checkpoint");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != header_len) throw CheckpointError("truncated checkpoint");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    ckpt.config = model_config_from_json(header.at("config"));
    ckpt.topology = graph::topology_from_json(header.at("topology"));
    if (header.contains("train_config")) ckpt.train_config = train_config_from_json(header.at("train_config"));

    const std::uint64_t blob_bytes = header.at("blob_bytes").get<std::uint64_t>();
    std::vector<char> blob(blob_bytes);
    in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
    if (static_cast<std::uint64_t>(in.gcount()) != blob_bytes) throw CheckpointError("truncated checkpoint");

    for (const auto& entry : header.at("tensors")) {
      CheckpointTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<ad::Shape>();
      const std::uint64_t off = entry.at("offset").get<std::uint64_t>();
      const std::size_t count = ad::numel(t.shape);
      if (off + count * sizeof(float) > blob_bytes) throw CheckpointError("truncated checkpoint");
      t.values.resize(count);
      std::memcpy(t.values.data(), blob.data() + off, count * sizeof(float));
      ckpt.tensors.push_back(std::move(t));
    }
    if (header.contains("optimizer")) {
      OptimizerState st;
      const auto& o = header.at("optimizer");
      st.step = o.at("step").get<std::uint64_t>();
      st.beta1 = o.at("beta1").get<double>();
      st.beta2 = o.at("beta2").get<double>();
      st.eps = o.at("eps").get<double>();
      for (const auto& t : ckpt.tensors) {
        if (t.name.starts_with("adam_m/")) st.first_moment.push_back(t.values);
        if (t.name.starts_with("adam_v/")) st.second_moment.push_back(t.values);
      }
      ckpt.optimizer = std::move(st);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("config mismatch: ") + e.what());
  } catch (const graph::TopologyError& e) {
    throw CheckpointError(std::string("config mismatch: ") + e.what());
  }
  return ckpt;
}

void restore_model(model::Model<float>& model, const Checkpoint& ckpt) {
  if (!(model.config() == ckpt.config) || !(model.topology() == ckpt.topology)) {
    throw CheckpointError("config mismatch: checkpoint was written for a different model configuration");
  }
  for (auto& [name, t] : model.named_parameters()) {
    const CheckpointTensor* src = ckpt.find("param/" + name);
    if (src == nullptr) throw CheckpointError("config mismatch: checkpoint lacks parameter " + name);
    if (src->shape != t.shape()) {
      throw CheckpointError("config mismatch: parameter " + name + " has shape " + ad::to_string(src->shape) +
                            ", model expects " + ad::to_string(t.shape()));
    }
    auto dst = t.data();
    std::copy(src->values.begin(), src->values.end(), dst.begin());
  }
  model::for_each_running_stats<float>(model.params(), [&](const std::string& name, ad::RunningStats<float>& s) {
    const CheckpointTensor* mean = ckpt.find("stats/" + name + "/mean");
    const CheckpointTensor* var = ckpt.find("stats/" + name + "/var");
    if (mean == nullptr || var == nullptr) {
      s = ad::RunningStats<float>{};
      return;
    }
    s.mean = mean->values;
    s.var = var->values;
    s.ready = true;
  });
}

model::Model<float> load_model(const Checkpoint& ckpt) {
  if (ckpt.config.joints != ckpt.topology.joint_count()) {
    throw CheckpointError("config mismatch: config has " + std::to_string(ckpt.config.joints) +
                          " joints, topology has " + std::to_string(ckpt.topology.joint_count()));
  }
  model::Model<float> m(ckpt.config, ckpt.topology, 0);
  restore_model(m, ckpt);
  return m;
}

}  // namespace dcgct::train
