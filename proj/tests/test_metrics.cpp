#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "dcgct/metrics.hpp"

using namespace dcgct::metrics;

namespace {

PoseSet random_poses(std::size_t samples, std::size_t joints, std::uint64_t seed, double scale = 200.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(samples * joints * 3);
  for (auto& x : v) x = dist(rng);
  return PoseSet(samples, joints, std::move(v));
}

Eigen::Matrix3d rotation(double a, double b, double c) {
  return (Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(b, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(c, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

PoseSet similarity(const PoseSet& in, const Eigen::Matrix3d& r, double s, const Eigen::Vector3d& t) {
  PoseSet out = in;
  for (std::size_t i = 0; i < in.samples * in.joints; ++i) {
    const Eigen::Vector3d p(in.xyz[3 * i], in.xyz[3 * i + 1], in.xyz[3 * i + 2]);
    const Eigen::Vector3d q = s * r * p + t;
    for (int k = 0; k < 3; ++k) out.xyz[3 * i + k] = q(k);
  }
  return out;
}

}  // namespace

TEST_CASE("mpjpe by hand") {
  const PoseSet gt(1, 2, {0, 0, 0, 0, 0, 0});
  const PoseSet pred(1, 2, {3, 4, 0, 0, 0, 1});
  CHECK(mpjpe(pred, gt) == doctest::Approx(3.0));
  const auto e = joint_errors(pred, gt);
  CHECK(e[0] == doctest::Approx(5.0));
  CHECK(e[1] == doctest::Approx(1.0));
  CHECK_THROWS_AS(mpjpe(PoseSet(1, 3, std::vector<double>(9, 0.0)), gt), MetricError);
  CHECK_THROWS_AS(PoseSet(1, 2, {1, 2, 3}), MetricError);
}

TEST_CASE("procrustes recovers a similarity transform") {
  const PoseSet gt = random_poses(3, 17, 1);
  const PoseSet pred = similarity(gt, rotation(0.3, -1.1, 2.0), 1.7, {30, -20, 500});
  CHECK(mpjpe(pred, gt) > 100.0);
  CHECK(p_mpjpe(pred, gt) < 1e-8);
  // Without scale a uniformly scaled copy keeps a residual.
  CHECK(p_mpjpe(pred, gt, {false}) > 1.0);
}

TEST_CASE("procrustes never reflects") {
  const PoseSet gt = random_poses(1, 17, 2);
  PoseSet mirrored = gt;
  for (std::size_t j = 0; j < 17; ++j) mirrored.xyz[3 * j] = -mirrored.xyz[3 * j];
  const Points aligned = procrustes_align(Points(mirrored.sample(0)), Points(gt.sample(0)));
  CHECK(p_mpjpe(mirrored, gt) > 1.0);
  // The linear map taking the centered input to the centered result is s R,
  // so its determinant has the sign of det(R).
  Points a = aligned, m = Points(mirrored.sample(0));
  a.rowwise() -= a.colwise().mean();
  m.rowwise() -= m.colwise().mean();
  const Eigen::Matrix3d fit = m.colPivHouseholderQr().solve(a);
  CHECK(fit.determinant() > 0.0);
}

TEST_CASE("degenerate ground truth") {
  const PoseSet gt(1, 4, std::vector<double>(12, 5.0));
  const PoseSet pred = random_poses(1, 4, 3);
  CHECK_THROWS_WITH_AS(p_mpjpe(pred, gt), doctest::Contains("degenerate"), MetricError);
}

TEST_CASE("aligned squared error never exceeds the raw error") {
  const PoseSet gt = random_poses(50, 17, 4);
  PoseSet pred = random_poses(50, 17, 5, 40.0);
  for (std::size_t i = 0; i < pred.xyz.size(); ++i) pred.xyz[i] += gt.xyz[i];
  for (std::size_t i = 0; i < 50; ++i) {
    const Points p = pred.sample(i), g = gt.sample(i);
    const double raw = (p - g).squaredNorm();
    const double aligned = (procrustes_align(p, g) - g).squaredNorm();
    CHECK(aligned <= raw + 1e-9 * raw);
  }
}

TEST_CASE("pck and auc") {
  const PoseSet gt(1, 4, std::vector<double>(12, 0.0));
  const PoseSet pred(1, 4, {10, 0, 0, 149, 0, 0, 150, 0, 0, 400, 0, 0});
  CHECK(pck(pred, gt) == doctest::Approx(50.0));
  CHECK(pck(pred, gt, 151.0) == doctest::Approx(75.0));
  CHECK_THROWS_AS(pck(pred, gt, 0.0), MetricError);
  CHECK(auc(gt, gt) == doctest::Approx(100.0));
  const auto grid = default_auc_thresholds();
  CHECK(grid.size() == 30);
  CHECK(grid.front() == 5.0);
  CHECK(grid.back() == 150.0);
  // 10 mm is strictly below 28 of 30 thresholds, 149 mm only below 150.
  CHECK(auc(pred, gt) == doctest::Approx((28.0 + 1.0) / (4.0 * 30.0) * 100.0));
  CHECK_THROWS_AS(auc(pred, gt, std::span<const double>{}), MetricError);
}

TEST_CASE("per-action grouping and protocol fields") {
  const PoseSet gt = random_poses(4, 17, 6);
  PoseSet pred = gt;
  for (std::size_t i = 0; i < 17 * 3; ++i) pred.xyz[i] += 10.0;  // first sample off by a constant
  const std::vector<std::string> actions{"Walking", "Sitting", "Walking", "Sitting"};
  const auto report = evaluate(pred, gt, actions, Protocol::all);
  REQUIRE(report.per_action.size() == 2);
  CHECK(report.per_action.at("Sitting").mpjpe_mm == doctest::Approx(0.0));
  CHECK(report.per_action.at("Walking").mpjpe_mm == doctest::Approx(std::sqrt(300.0) / 2.0));
  CHECK(report.per_action.at("Walking").sample_count == 2);
  CHECK(report.overall.mpjpe_mm == doctest::Approx(std::sqrt(300.0) / 4.0));
  CHECK(report.overall.p_mpjpe_mm < 1e-6);

  const auto j = to_json(report);
  CHECK(j.contains("mpjpe_mm"));
  CHECK(j.contains("p_mpjpe_mm"));
  CHECK(j.at("per_action").contains("Walking"));

  const auto only = to_json(evaluate(pred, gt, actions, Protocol::mpjpe));
  CHECK(only.contains("mpjpe_mm"));
  CHECK_FALSE(only.contains("p_mpjpe_mm"));
  CHECK(only.contains("pck_percent"));

  const auto table = format_action_table(report);
  CHECK(table.find("Avg") != std::string::npos);
  CHECK(table.find("P-MPJPE") != std::string::npos);

  const std::vector<std::string> wrong{"Walking"};
  CHECK_THROWS_AS(evaluate(pred, gt, wrong), MetricError);
  const auto unlabeled = evaluate(pred, gt, {});
  CHECK(unlabeled.per_action.empty());
}
