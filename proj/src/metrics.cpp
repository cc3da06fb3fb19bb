#include "dcgct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <Eigen/Dense>

namespace dcgct::metrics {

PoseSet::PoseSet(std::size_t samples_, std::size_t joints_, std::vector<double> values)
    : samples(samples_), joints(joints_), xyz(std::move(values)) {
  if (xyz.size() != samples * joints * 3) {
    throw MetricError("pose set holds " + std::to_string(xyz.size()) + " values, expected " +
                      std::to_string(samples * joints * 3));
  }
}

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> PoseSet::sample(std::size_t i) const {
  return {xyz.data() + i * joints * 3, static_cast<Eigen::Index>(joints), 3};
}

namespace {

void require_same_shape(const PoseSet& a, const PoseSet& b) {
  if (a.samples != b.samples || a.joints != b.joints) {
    throw MetricError("shape mismatch: [" + std::to_string(a.samples) + "," + std::to_string(a.joints) + ",3] vs [" +
                      std::to_string(b.samples) + "," + std::to_string(b.joints) + ",3]");
  }
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

double pck_from_errors(const std::vector<double>& errors, double threshold) {
  if (errors.empty()) return 0.0;
  const auto hits = std::count_if(errors.begin(), errors.end(), [&](double e) { return e < threshold; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

}  // namespace

std::vector<double> joint_errors(const PoseSet& pred, const PoseSet& gt) {
  require_same_shape(pred, gt);
  std::vector<double> out(pred.samples * pred.joints);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double dx = pred.xyz[i * 3] - gt.xyz[i * 3];
    const double dy = pred.xyz[i * 3 + 1] - gt.xyz[i * 3 + 1];
    const double dz = pred.xyz[i * 3 + 2] - gt.xyz[i * 3 + 2];
    out[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return out;
}

double mpjpe(const PoseSet& pred, const PoseSet& gt) { return mean_of(joint_errors(pred, gt)); }

Points procrustes_align(const Points& pred, const Points& gt, const AlignOptions& options) {
  if (pred.rows() != gt.rows()) throw MetricError("procrustes_align: point counts differ");
  if (gt.rows() < 3) throw MetricError("procrustes_align: need at least 3 points");
  const Eigen::RowVector3d mu_pred = pred.colwise().mean();
  const Eigen::RowVector3d mu_gt = gt.colwise().mean();
  const Points x = pred.rowwise() - mu_pred;
  const Points y = gt.rowwise() - mu_gt;
  const double norm_y = y.squaredNorm();
  if (!(norm_y > 1e-12)) throw MetricError("procrustes_align: degenerate ground truth (all points coincident)");
  const double norm_x = x.squaredNorm();
  if (!(norm_x > 1e-24)) {
    // Every predicted joint coincides; the best fit collapses onto the gt centroid.
    return Points(gt.rows(), 3).rowwise() = mu_gt;
  }

  // Rotation R maximizing tr(R^T Y^T X): for the row-vector convention
  // aligned = x R^T, take the SVD of Y^T X.
  const Eigen::Matrix3d cov = y.transpose() * x;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Eigen::Matrix3d rotation = svd.matrixU() * d * svd.matrixV().transpose();
  double s = 1.0;
  if (options.with_scale) s = (svd.singularValues().asDiagonal() * d).trace() / norm_x;
  return (s * (x * rotation.transpose())).rowwise() + mu_gt;
}

double p_mpjpe(const PoseSet& pred, const PoseSet& gt, const AlignOptions& options) {
  require_same_shape(pred, gt);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.samples; ++i) {
    const Points g = gt.sample(i);
    const Points aligned = procrustes_align(pred.sample(i), g, options);
    total += (aligned - g).rowwise().norm().sum();
  }
  const std::size_t count = pred.samples * pred.joints;
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

double pck(const PoseSet& pred, const PoseSet& gt, double threshold_mm) {
  if (!(threshold_mm > 0.0)) throw MetricError("pck: threshold must be positive");
  return pck_from_errors(joint_errors(pred, gt), threshold_mm);
}

std::vector<double> default_auc_thresholds() {
  std::vector<double> t;
  for (int mm = 5; mm <= 150; mm += 5) t.push_back(mm);
  return t;
}

double auc(const PoseSet& pred, const PoseSet& gt, std::span<const double> thresholds) {
  if (thresholds.empty()) throw MetricError("auc: empty threshold grid");
  const auto errors = joint_errors(pred, gt);
  double total = 0.0;
  for (double t : thresholds) total += pck_from_errors(errors, t);
  return total / static_cast<double>(thresholds.size());
}

double auc(const PoseSet& pred, const PoseSet& gt) {
  const auto t = default_auc_thresholds();
  return auc(pred, gt, t);
}

namespace {

MetricValues compute(const PoseSet& pred, const PoseSet& gt, Protocol protocol) {
  MetricValues v;
  v.sample_count = pred.samples;
  if (pred.samples == 0) return v;
  v.mpjpe_mm = mpjpe(pred, gt);
  if (protocol != Protocol::mpjpe) v.p_mpjpe_mm = p_mpjpe(pred, gt);
  v.pck_percent = pck(pred, gt, 150.0);
  v.auc_percent = auc(pred, gt);
  return v;
}

PoseSet subset(const PoseSet& s, const std::vector<std::size_t>& rows) {
  std::vector<double> values;
  values.reserve(rows.size() * s.joints * 3);
  for (std::size_t r : rows) {
    values.insert(values.end(), s.xyz.begin() + static_cast<long>(r * s.joints * 3),
                  s.xyz.begin() + static_cast<long>((r + 1) * s.joints * 3));
  }
  return PoseSet(rows.size(), s.joints, std::move(values));
}

}  // namespace

MetricReport evaluate(const PoseSet& pred, const PoseSet& gt, std::span<const std::string> actions,
                      Protocol protocol) {
  require_same_shape(pred, gt);
  if (!actions.empty() && actions.size() != pred.samples) {
    throw MetricError("evaluate: expected one action label per sample");
  }
  MetricReport report;
  report.include_mpjpe = true;
  report.include_p_mpjpe = protocol != Protocol::mpjpe;
  report.overall = compute(pred, gt, protocol);
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (!actions[i].empty()) groups[actions[i]].push_back(i);
  }
  for (const auto& [action, rows] : groups) {
    report.per_action[action] = compute(subset(pred, rows), subset(gt, rows), protocol);
  }
  return report;
}

namespace {

nlohmann::json values_json(const MetricValues& v, const MetricReport& r) {
  nlohmann::json j;
  if (r.include_mpjpe) j["mpjpe_mm"] = v.mpjpe_mm;
  if (r.include_p_mpjpe) j["p_mpjpe_mm"] = v.p_mpjpe_mm;
  j["pck_percent"] = v.pck_percent;
  j["auc_percent"] = v.auc_percent;
  j["sample_count"] = v.sample_count;
  return j;
}

}  // namespace

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json j = values_json(report.overall, report);
  nlohmann::json actions = nlohmann::json::object();
  for (const auto& [name, v] : report.per_action) actions[name] = values_json(v, report);
  j["per_action"] = actions;
  return j;
}

std::string format_action_table(const MetricReport& report) {
  std::vector<std::string> columns;
  for (const auto& [name, _] : report.per_action) columns.push_back(name);
  columns.push_back("Avg");
  auto lookup = [&](const std::string& col) -> const MetricValues& {
    return col == "Avg" ? report.overall : report.per_action.at(col);
  };
  std::size_t width = 8;
  for (const auto& c : columns) width = std::max(width, c.size() + 1);

  std::ostringstream os;
  os << std::left << std::setw(14) << "Metric";
  for (const auto& c : columns) os << std::right << std::setw(static_cast<int>(width)) << c;
  os << '\n';
  auto row = [&](const char* label, double MetricValues::*field) {
    os << std::left << std::setw(14) << label;
    for (const auto& c : columns) {
      os << std::right << std::setw(static_cast<int>(width)) << std::fixed << std::setprecision(2)
         << lookup(c).*field;
    }
    os << '\n';
  };
  if (report.include_mpjpe) row("MPJPE", &MetricValues::mpjpe_mm);
  if (report.include_p_mpjpe) row("P-MPJPE", &MetricValues::p_mpjpe_mm);
  row("PCK@150", &MetricValues::pck_percent);
  row("AUC", &MetricValues::auc_percent);
  return os.str();
}

}  // namespace dcgct::metrics
