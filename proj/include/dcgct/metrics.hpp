#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace dcgct::metrics {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// [samples, joints, 3] row-major, millimeters.
struct PoseSet {
  std::size_t samples = 0;
  std::size_t joints = 0;
  std::vector<double> xyz;

  PoseSet() = default;
  PoseSet(std::size_t samples_, std::size_t joints_, std::vector<double> values);
  template <typename T>
  static PoseSet from(std::size_t samples_, std::size_t joints_, std::span<const T> values) {
    return PoseSet(samples_, joints_, std::vector<double>(values.begin(), values.end()));
  }

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> sample(std::size_t i) const;
};

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// Per-(sample, joint) Euclidean distances.
std::vector<double> joint_errors(const PoseSet& pred, const PoseSet& gt);

double mpjpe(const PoseSet& pred, const PoseSet& gt);

struct AlignOptions {
  bool with_scale = true;
};

// s R (pred - mean(pred)) + mean(gt) minimizing the squared error, with
// det(R) = +1. Throws MetricError for degenerate ground truth.
Points procrustes_align(const Points& pred, const Points& gt, const AlignOptions& options = {});

double p_mpjpe(const PoseSet& pred, const PoseSet& gt, const AlignOptions& options = {});

// Percentage of joints with error strictly below the threshold.
double pck(const PoseSet& pred, const PoseSet& gt, double threshold_mm = 150.0);

// 5, 10, ..., 150 mm.
std::vector<double> default_auc_thresholds();
double auc(const PoseSet& pred, const PoseSet& gt, std::span<const double> thresholds);
double auc(const PoseSet& pred, const PoseSet& gt);

struct MetricValues {
  double mpjpe_mm = 0.0;
  double p_mpjpe_mm = 0.0;
  double pck_percent = 0.0;
  double auc_percent = 0.0;
  std::size_t sample_count = 0;
};

struct MetricReport {
  MetricValues overall;
  std::map<std::string, MetricValues> per_action;
  bool include_mpjpe = true;
  bool include_p_mpjpe = true;
};

// MPJPE, PCK and AUC are always reported; protocols other than `mpjpe` add P-MPJPE.
enum class Protocol { mpjpe, p_mpjpe, all };

// `actions` may be empty or hold one label per sample.
MetricReport evaluate(const PoseSet& pred, const PoseSet& gt, std::span<const std::string> actions,
                      Protocol protocol = Protocol::all);

nlohmann::json to_json(const MetricReport& report);

// Rows are metrics, columns are actions followed by "Avg".
std::string format_action_table(const MetricReport& report);

}  // namespace dcgct::metrics
