#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "dcgct/dataset.hpp"

namespace dcgct::data {

namespace {

// Rotation limits (radians) about the local x, y, z axes; [lo, hi] per axis.
struct JointLimits {
  std::array<double, 3> lo{-0.5, -0.5, -0.5};
  std::array<double, 3> hi{0.5, 0.5, 0.5};
};

constexpr double kImageSize = 1000.0;
constexpr double kFocal = 1150.0;

bool is_h36m17(const graph::SkeletonTopology& topo) { return topo == graph::h36m17(); }

std::vector<JointLimits> joint_limits(const graph::SkeletonTopology& topo) {
  std::vector<JointLimits> limits(topo.joint_count());
  if (!is_h36m17(topo)) return limits;
  auto set = [&](std::size_t j, std::array<double, 3> lo, std::array<double, 3> hi) { limits[j] = {lo, hi}; };
  set(0, {-0.2, -std::numbers::pi, -0.2}, {0.2, std::numbers::pi, 0.2});  // whole-body heading
  set(1, {-1.2, -0.4, -0.5}, {0.6, 0.4, 0.3});                              // hips
  set(4, {-1.2, -0.4, -0.3}, {0.6, 0.4, 0.5});
  set(2, {0.0, -0.1, -0.1}, {1.6, 0.1, 0.1});  // knees flex one way
  set(5, {0.0, -0.1, -0.1}, {1.6, 0.1, 0.1});
  set(7, {-0.3, -0.4, -0.2}, {0.5, 0.4, 0.2});  // spine
  set(8, {-0.2, -0.3, -0.2}, {0.3, 0.3, 0.2});  // thorax
  set(9, {-0.4, -0.6, -0.3}, {0.4, 0.6, 0.3});  // neck
  set(11, {-1.5, -0.8, -0.3}, {1.5, 0.8, 1.4});  // shoulders
  set(14, {-1.5, -0.8, -1.4}, {1.5, 0.8, 0.3});
  set(12, {-2.0, -0.3, -0.3}, {0.0, 0.3, 0.3});  // elbows
  set(15, {-2.0, -0.3, -0.3}, {0.0, 0.3, 0.3});
  return limits;
}

Eigen::Matrix3d euler_xyz(const std::array<double, 3>& a) {
  return (Eigen::AngleAxisd(a[0], Eigen::Vector3d::UnitX()) * Eigen::AngleAxisd(a[1], Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(a[2], Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

// Joints ordered so every parent precedes its children.
std::vector<std::size_t> topological_order(const graph::SkeletonTopology& topo) {
  std::vector<std::size_t> order{topo.root};
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t c : topo.children(order[i])) order.push_back(c);
  }
  return order;
}

// Root-relative joint positions (body frame, mm) for per-joint Euler angles.
std::vector<Eigen::Vector3d> forward_kinematics(const graph::SkeletonTopology& topo,
                                                const std::vector<std::array<double, 3>>& offsets,
                                                const std::vector<std::array<double, 3>>& angles,
                                                const std::vector<std::size_t>& order) {
  const std::size_t n = topo.joint_count();
  std::vector<Eigen::Vector3d> pos(n, Eigen::Vector3d::Zero());
  std::vector<Eigen::Matrix3d> global(n, Eigen::Matrix3d::Identity());
  for (std::size_t j : order) {
    const Eigen::Matrix3d local = euler_xyz(angles[j]);
    if (!topo.parent[j]) {
      global[j] = local;
      continue;
    }
    const std::size_t p = *topo.parent[j];
    pos[j] = pos[p] + global[p] * Eigen::Vector3d(offsets[j][0], offsets[j][1], offsets[j][2]);
    global[j] = global[p] * local;
  }
  return pos;
}

}  // namespace

std::vector<std::array<double, 3>> rest_offsets_mm(const graph::SkeletonTopology& topo) {
  const std::size_t n = topo.joint_count();
  std::vector<std::array<double, 3>> offsets(n, {0.0, 0.0, 0.0});
  if (is_h36m17(topo)) {
    // Body frame: x to the subject's left, y down, z away from the camera.
    offsets = {{0, 0, 0},    {-130, 0, 0}, {0, 450, 0},  {0, 440, 0},  {130, 0, 0},  {0, 450, 0},
               {0, 440, 0},  {0, -230, 0}, {0, -250, 0}, {0, -110, 0}, {0, -120, 0}, {150, 0, 0},
               {0, 280, 0},  {0, 250, 0},  {-150, 0, 0}, {0, 280, 0},  {0, 250, 0}};
    return offsets;
  }
  // Generic skeletons: 200 mm bones fanned out by joint index.
  for (std::size_t j = 0; j < n; ++j) {
    if (!topo.parent[j]) continue;
    const double phi = 2.399963 * static_cast<double>(j);
    offsets[j] = {200.0 * std::cos(phi) * 0.6, 200.0 * 0.8, 200.0 * std::sin(phi) * 0.6};
  }
  return offsets;
}

Dataset synth_generate(const graph::SkeletonTopology& topo, const SynthOptions& options) {
  topo.validate();
  if (options.count < 1) throw std::invalid_argument("synth_generate: count must be >= 1");
  if (options.frames < 1 || options.frames % 2 == 0) throw std::invalid_argument("synth_generate: frames must be odd");

  const std::size_t n = topo.joint_count();
  const std::size_t frames = options.frames;
  const auto offsets = rest_offsets_mm(topo);
  const auto limits = joint_limits(topo);
  const auto order = topological_order(topo);

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset ds;
  ds.joints = n;
  ds.frames = frames;
  const std::size_t mid = (frames - 1) / 2;
  static const char* kActions[] = {"Walking", "Posing", "Reaching", "Sitting"};

  for (std::size_t s = 0; s < options.count; ++s) {
    std::vector<std::array<double, 3>> base(n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t a = 0; a < 3; ++a) base[j][a] = limits[j].lo[a] + unit(rng) * (limits[j].hi[a] - limits[j].lo[a]);
    }
    // Camera placement of the root.
    const double depth = 3000.0 + 3000.0 * unit(rng);
    const Eigen::Vector3d root(-500.0 + 1000.0 * unit(rng), -300.0 + 600.0 * unit(rng), depth);
    const Eigen::Vector3d drift(gauss(rng) * 5.0, 0.0, gauss(rng) * 5.0);

    // Low-pass filtered perturbations, one trajectory per joint angle.
    std::vector<std::vector<std::array<double, 3>>> angles(frames, base);
    if (frames > 1) {
      constexpr double kAlpha = 0.15, kAmplitude = 0.5;
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t a = 0; a < 3; ++a) {
          double state = 0.0;
          std::vector<double> track(frames);
          for (std::size_t t = 0; t < frames; ++t) {
            state = (1.0 - kAlpha) * state + kAlpha * gauss(rng);
            track[t] = state;
          }
          const double centre = track[mid];
          for (std::size_t t = 0; t < frames; ++t) angles[t][j][a] += kAmplitude * (track[t] - centre);
        }
      }
    }

    PoseSample sample;
    sample.input2d.reserve(frames * n * 2);
    for (std::size_t t = 0; t < frames; ++t) {
      const auto pose = forward_kinematics(topo, offsets, angles[t], order);
      const Eigen::Vector3d frame_root = root + drift * (static_cast<double>(t) - static_cast<double>(mid));
      for (std::size_t j = 0; j < n; ++j) {
        const Eigen::Vector3d p = pose[j] + frame_root;
        double u = kFocal * p.x() / p.z() + kImageSize / 2.0;
        double v = kFocal * p.y() / p.z() + kImageSize / 2.0;
        if (options.noise_mm > 0.0) {
          const double sigma_px = options.noise_mm * kFocal / frame_root.z();
          u += sigma_px * gauss(rng);
          v += sigma_px * gauss(rng);
        }
        const auto q = normalize_2d(u, v, kImageSize, kImageSize);
        sample.input2d.push_back(static_cast<float>(q[0]));
        sample.input2d.push_back(static_cast<float>(q[1]));
      }
      if (t == mid) {
        sample.target3d_mm.resize(n * 3);
        for (std::size_t j = 0; j < n; ++j) {
          const Eigen::Vector3d rel = pose[j] - pose[topo.root];
          for (std::size_t d = 0; d < 3; ++d) sample.target3d_mm[j * 3 + d] = static_cast<float>(rel[static_cast<long>(d)]);
        }
        sample.camera = Camera{kFocal, kImageSize / 2.0, kImageSize / 2.0, kImageSize, kImageSize,
                               {frame_root.x() + pose[topo.root].x(), frame_root.y() + pose[topo.root].y(),
                                frame_root.z() + pose[topo.root].z()}};
      }
    }
    sample.action = kActions[s % 4];
    sample.subject = "synthetic";
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

}  // namespace dcgct::data
