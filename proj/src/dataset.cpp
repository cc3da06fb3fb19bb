#include "dcgct/dataset.hpp"

#include <fstream>
#include <sstream>

namespace dcgct::data {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw DatasetError("line " + std::to_string(line) + ": " + what);
}

std::vector<float> read_points(const nlohmann::json& rows, std::size_t joints, std::size_t dims, std::size_t line,
                               const char* field) {
  if (!rows.is_array()) fail(line, std::string(field) + " must be an array");
  if (rows.size() != joints) {
    fail(line, std::string(field) + " has " + std::to_string(rows.size()) + " joints, expected " +
                   std::to_string(joints));
  }
  std::vector<float> out;
  out.reserve(joints * dims);
  for (const auto& p : rows) {
    if (!p.is_array() || p.size() != dims) {
      fail(line, std::string(field) + " entries must have " + std::to_string(dims) + " coordinates");
    }
    for (const auto& v : p) {
      if (!v.is_number()) fail(line, std::string(field) + " contains a non-numeric value");
      const double d = v.get<double>();
      if (!std::isfinite(d)) fail(line, std::string(field) + " contains a non-finite value");
      out.push_back(static_cast<float>(d));
    }
  }
  return out;
}

nlohmann::json points_json(std::span<const float> values, std::size_t dims) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < values.size(); i += dims) {
    rows.push_back(std::vector<float>(values.begin() + static_cast<long>(i),
                                      values.begin() + static_cast<long>(i + dims)));
  }
  return rows;
}

}  // namespace

Dataset parse_dataset(std::istream& in, const graph::SkeletonTopology& topo) {
  Dataset ds;
  ds.joints = topo.joint_count();
  const std::size_t n = ds.joints;
  std::optional<std::size_t> frames;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(line, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) fail(line, "record must be a JSON object");
    if (!rec.contains("input2d")) fail(line, "missing input2d");
    if (!rec.contains("target3d_mm")) fail(line, "missing target3d_mm");

    PoseSample s;
    const auto& input = rec.at("input2d");
    if (!input.is_array() || input.empty()) fail(line, "input2d must be a non-empty array");
    const bool sequence = input[0].is_array() && !input[0].empty() && input[0][0].is_array();
    const std::size_t t = sequence ? input.size() : 1;
    if (frames && *frames != t) {
      fail(line, "frame count " + std::to_string(t) + " differs from earlier records (" + std::to_string(*frames) + ")");
    }
    frames = t;
    if (sequence) {
      for (const auto& frame : input) {
        auto pts = read_points(frame, n, 2, line, "input2d");
        s.input2d.insert(s.input2d.end(), pts.begin(), pts.end());
      }
    } else {
      s.input2d = read_points(input, n, 2, line, "input2d");
    }
    s.target3d_mm = read_points(rec.at("target3d_mm"), n, 3, line, "target3d_mm");

    const std::size_t r = topo.root;
    if (s.target3d_mm[r * 3] != 0.0f || s.target3d_mm[r * 3 + 1] != 0.0f || s.target3d_mm[r * 3 + 2] != 0.0f) {
      const float root[3] = {s.target3d_mm[r * 3], s.target3d_mm[r * 3 + 1], s.target3d_mm[r * 3 + 2]};
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t d = 0; d < 3; ++d) s.target3d_mm[j * 3 + d] -= root[d];
      }
      ds.warnings.push_back("line " + std::to_string(line) + ": target3d_mm root was not at the origin; re-centered");
    }
    try {
      if (rec.contains("action")) s.action = rec.at("action").get<std::string>();
      if (rec.contains("subject")) s.subject = rec.at("subject").get<std::string>();
      if (rec.contains("camera")) {
        const auto& c = rec.at("camera");
        Camera cam;
        cam.focal = c.at("focal").get<double>();
        cam.cx = c.at("cx").get<double>();
        cam.cy = c.at("cy").get<double>();
        cam.width = c.at("width").get<double>();
        cam.height = c.at("height").get<double>();
        cam.root_mm = c.at("root_mm").get<std::array<double, 3>>();
        s.camera = cam;
      }
    } catch (const nlohmann::json::exception& e) {
      fail(line, std::string("malformed optional field: ") + e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  ds.frames = frames.value_or(1);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const graph::SkeletonTopology& topo) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset " + path.string());
  return parse_dataset(in, topo);
}

nlohmann::json sample_to_json(const PoseSample& sample, std::size_t joints, std::size_t frames) {
  nlohmann::json rec;
  if (frames == 1) {
    rec["input2d"] = points_json(sample.input2d, 2);
  } else {
    nlohmann::json seq = nlohmann::json::array();
    const std::size_t per = joints * 2;
    for (std::size_t t = 0; t < frames; ++t) {
      seq.push_back(points_json(std::span<const float>(sample.input2d).subspan(t * per, per), 2));
    }
    rec["input2d"] = seq;
  }
  rec["target3d_mm"] = points_json(sample.target3d_mm, 3);
  if (!sample.action.empty()) rec["action"] = sample.action;
  if (!sample.subject.empty()) rec["subject"] = sample.subject;
  if (sample.camera) {
    const auto& c = *sample.camera;
    rec["camera"] = {{"focal", c.focal}, {"cx", c.cx},         {"cy", c.cy},
                     {"width", c.width}, {"height", c.height}, {"root_mm", c.root_mm}};
  }
  return rec;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write dataset " + path.string());
  for (const auto& s : dataset.samples) out << sample_to_json(s, dataset.joints, dataset.frames).dump() << '\n';
  if (!out) throw DatasetError("failed writing dataset " + path.string());
}

std::array<double, 2> normalize_2d(double x, double y, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) throw std::invalid_argument("normalize_2d: image size must be positive");
  return {2.0 * x / width - 1.0, (2.0 * y - height) / width};
}

std::array<double, 2> denormalize_2d(double x, double y, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) throw std::invalid_argument("denormalize_2d: image size must be positive");
  return {(x + 1.0) * width / 2.0, (y * width + height) / 2.0};
}

void normalize_2d_inplace(std::span<float> pixels, double width, double height) {
  if (pixels.size() % 2 != 0) throw std::invalid_argument("normalize_2d: expected (x, y) pairs");
  for (std::size_t i = 0; i < pixels.size(); i += 2) {
    const auto p = normalize_2d(pixels[i], pixels[i + 1], width, height);
    pixels[i] = static_cast<float>(p[0]);
    pixels[i + 1] = static_cast<float>(p[1]);
  }
}

template <typename S>
ad::Tensor<S> batch_inputs(const Dataset& dataset, std::span<const std::size_t> indices) {
  const std::size_t per = dataset.frames * dataset.joints * 2;
  std::vector<S> values;
  values.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    const auto& s = dataset.samples.at(i).input2d;
    values.insert(values.end(), s.begin(), s.end());
  }
  ad::Shape shape = dataset.frames == 1 ? ad::Shape{indices.size(), dataset.joints, 2}
                                        : ad::Shape{indices.size(), dataset.frames, dataset.joints, 2};
  return ad::Tensor<S>(std::move(shape), std::move(values));
}

template <typename S>
ad::Tensor<S> batch_targets(const Dataset& dataset, std::span<const std::size_t> indices) {
  std::vector<S> values;
  values.reserve(indices.size() * dataset.joints * 3);
  for (std::size_t i : indices) {
    const auto& s = dataset.samples.at(i).target3d_mm;
    values.insert(values.end(), s.begin(), s.end());
  }
  return ad::Tensor<S>(ad::Shape{indices.size(), dataset.joints, 3}, std::move(values));
}

template ad::Tensor<float> batch_inputs<float>(const Dataset&, std::span<const std::size_t>);
template ad::Tensor<double> batch_inputs<double>(const Dataset&, std::span<const std::size_t>);
template ad::Tensor<float> batch_targets<float>(const Dataset&, std::span<const std::size_t>);
template ad::Tensor<double> batch_targets<double>(const Dataset&, std::span<const std::size_t>);

}  // namespace dcgct::data
