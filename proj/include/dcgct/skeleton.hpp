#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace dcgct::graph {

class TopologyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Kinematic tree over the body joints. Immutable once validated.
struct SkeletonTopology {
  std::vector<std::string> joint_names;
  std::vector<std::optional<std::size_t>> parent;
  std::size_t root = 0;
  std::vector<std::pair<std::size_t, std::size_t>> symmetric_pairs;

  std::size_t joint_count() const { return parent.size(); }
  std::vector<std::size_t> children(std::size_t joint) const;
  // Partner joint in a symmetric pair, if any.
  std::optional<std::size_t> partner(std::size_t joint) const;

  // Throws TopologyError naming the violated invariant ("cyclic topology", ...).
  void validate() const;

  bool operator==(const SkeletonTopology&) const = default;
};

// The 17-joint body layout used throughout the pose-lifting literature.
SkeletonTopology h36m17();

// Accepts a preset name ("h36m17") or a path to a topology JSON file.
SkeletonTopology build_topology(std::string_view preset_or_path);

SkeletonTopology topology_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SkeletonTopology& topo);

enum class Category : std::size_t { self = 0, toward_root = 1, away_from_root = 2, symmetric = 3 };
inline constexpr std::size_t kCategoryCount = 4;
inline constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "self", "toward_root", "away_from_root", "symmetric"};

// Dense row-major N x N matrix.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t size) : n(size), values(size * size, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  bool operator==(const SquareMatrix&) const = default;
};

struct AdjacencySet {
  std::array<SquareMatrix, kCategoryCount> raw;
  std::array<SquareMatrix, kCategoryCount> normalized;

  std::size_t joint_count() const { return normalized[0].n; }
  const SquareMatrix& operator[](Category c) const { return normalized[static_cast<std::size_t>(c)]; }
};

// Symmetric normalization D^{-1/2} A D^{-1/2}. The left factor uses each row's
// out-degree and the right factor each column's in-degree, which is the usual
// formula for undirected graphs and keeps directed categories (a child's edge to
// its parent) nonzero. Rows with zero degree stay zero.
SquareMatrix normalize_symmetric(const SquareMatrix& raw);

AdjacencySet decompose_adjacency(const SkeletonTopology& topo);

// Union of the four raw category graphs (self-loops included), normalized once.
SquareMatrix merged_adjacency(const SkeletonTopology& topo);

nlohmann::json to_json(const AdjacencySet& adjacency);

// Mirrors a pose left/right: negates coordinate 0 and swaps the rows of each
// symmetric pair. `values` is [..., N, dims] row-major.
template <typename T>
void flip_pose_inplace(std::span<T> values, std::size_t dims, const SkeletonTopology& topo);

template <typename T>
std::vector<T> flip_pose(std::span<const T> values, std::size_t dims, const SkeletonTopology& topo) {
  std::vector<T> out(values.begin(), values.end());
  flip_pose_inplace(std::span<T>(out), dims, topo);
  return out;
}

}  // namespace dcgct::graph
