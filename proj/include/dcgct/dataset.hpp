#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcgct/skeleton.hpp"
#include "dcgct/tensor.hpp"

namespace dcgct::data {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pinhole camera the synthetic generator used for a sample.
struct Camera {
  double focal = 1150.0;
  double cx = 500.0;
  double cy = 500.0;
  double width = 1000.0;
  double height = 1000.0;
  std::array<double, 3> root_mm{0.0, 0.0, 0.0};  // root position in camera coordinates

  bool operator==(const Camera&) const = default;
};

struct PoseSample {
  std::vector<float> input2d;      // [N,2] or [T,N,2], normalized image coordinates
  std::vector<float> target3d_mm;  // [N,3], root-relative
  std::string action;
  std::string subject;
  std::optional<Camera> camera;
};

enum class Split { train, val, test };

struct Dataset {
  std::vector<PoseSample> samples;
  std::size_t joints = 0;
  std::size_t frames = 1;
  Split split = Split::train;
  std::vector<std::string> warnings;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// One JSON object per line: {input2d, target3d_mm, action?, subject?, camera?}.
// An empty file yields an empty dataset. Targets whose root is not at the
// origin are re-centered with a warning.
Dataset load_dataset(const std::filesystem::path& path, const graph::SkeletonTopology& topo);
Dataset parse_dataset(std::istream& in, const graph::SkeletonTopology& topo);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

nlohmann::json sample_to_json(const PoseSample& sample, std::size_t joints, std::size_t frames);

// Image-anchored normalization: x' = 2x/w - 1, y' = (2y - h)/w.
std::array<double, 2> normalize_2d(double x, double y, double width, double height);
std::array<double, 2> denormalize_2d(double x, double y, double width, double height);
void normalize_2d_inplace(std::span<float> pixels, double width, double height);

// Stacks the selected samples: [B,N,2] or [B,T,N,2] inputs, [B,N,3] targets.
template <typename S>
ad::Tensor<S> batch_inputs(const Dataset& dataset, std::span<const std::size_t> indices);
template <typename S>
ad::Tensor<S> batch_targets(const Dataset& dataset, std::span<const std::size_t> indices);

struct SynthOptions {
  std::size_t count = 64;
  std::size_t frames = 1;
  double noise_mm = 0.0;
  std::uint64_t seed = 0;
};

// Random articulated poses: fixed bone-length table, joint rotations within
// per-joint limits, forward kinematics from the root, pinhole projection.
// For T > 1 the rotations follow low-pass filtered trajectories and the middle
// frame supplies the 3D target.
Dataset synth_generate(const graph::SkeletonTopology& topo, const SynthOptions& options);

// Rest-pose bone offsets (mm, parent frame) used by the generator.
std::vector<std::array<double, 3>> rest_offsets_mm(const graph::SkeletonTopology& topo);

}  // namespace dcgct::data
