#include "dcgct/skeleton.hpp"

#include <cmath>
#include <fstream>

namespace dcgct::graph {

std::vector<std::size_t> SkeletonTopology::children(std::size_t joint) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < parent.size(); ++j) {
    if (parent[j] && *parent[j] == joint) out.push_back(j);
  }
  return out;
}

std::optional<std::size_t> SkeletonTopology::partner(std::size_t joint) const {
  for (const auto& [a, b] : symmetric_pairs) {
    if (a == joint) return b;
    if (b == joint) return a;
  }
  return std::nullopt;
}

void SkeletonTopology::validate() const {
  const std::size_t n = parent.size();
  if (n == 0) throw TopologyError("topology has no joints");
  if (!joint_names.empty() && joint_names.size() != n) {
    throw TopologyError("joint_names length " + std::to_string(joint_names.size()) +
                        " does not match parent length " + std::to_string(n));
  }
  if (root >= n) throw TopologyError("root index out of range");
  if (parent[root]) throw TopologyError("root joint must not have a parent");

  std::size_t roots = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!parent[j]) {
      ++roots;
    } else if (*parent[j] >= n) {
      throw TopologyError("parent index out of range at joint " + std::to_string(j));
    }
  }
  if (roots != 1) throw TopologyError("topology must have exactly one root, found " + std::to_string(roots));

  // Every joint must reach the root within n steps.
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t cur = j;
    std::size_t steps = 0;
    while (parent[cur]) {
      cur = *parent[cur];
      if (++steps > n) throw TopologyError("cyclic topology");
    }
  }

  std::vector<bool> paired(n, false);
  for (const auto& [a, b] : symmetric_pairs) {
    if (a >= n || b >= n) throw TopologyError("symmetric pair index out of range");
    if (a == b) throw TopologyError("joint " + std::to_string(a) + " paired with itself");
    if (paired[a] || paired[b]) throw TopologyError("joint appears in more than one symmetric pair");
    paired[a] = paired[b] = true;
  }
}

SkeletonTopology h36m17() {
  SkeletonTopology t;
  t.joint_names = {"Pelvis", "RHip",  "RKnee",     "RAnkle",    "LHip",   "LKnee",
                   "LAnkle", "Spine", "Thorax",    "Neck",      "Head",   "LShoulder",
                   "LElbow", "LWrist", "RShoulder", "RElbow",   "RWrist"};
  const int parents[17] = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  for (int p : parents) {
    t.parent.push_back(p < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(p)));
  }
  t.root = 0;
  t.symmetric_pairs = {{1, 4}, {2, 5}, {3, 6}, {11, 14}, {12, 15}, {13, 16}};
  return t;
}

SkeletonTopology topology_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw TopologyError("malformed topology: expected a JSON object");
  SkeletonTopology t;
  try {
    for (const auto& p : j.at("parents")) {
      if (p.is_null() || (p.is_number_integer() && p.get<long long>() < 0)) {
        t.parent.emplace_back(std::nullopt);
      } else {
        t.parent.emplace_back(p.get<std::size_t>());
      }
    }
    if (j.contains("names")) t.joint_names = j.at("names").get<std::vector<std::string>>();
    t.root = j.at("root").get<std::size_t>();
    if (j.contains("symmetric_pairs")) {
      for (const auto& pair : j.at("symmetric_pairs")) {
        if (!pair.is_array() || pair.size() != 2) throw TopologyError("malformed topology: pair must have two entries");
        t.symmetric_pairs.emplace_back(pair[0].get<std::size_t>(), pair[1].get<std::size_t>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw TopologyError(std::string("malformed topology: ") + e.what());
  }
  if (t.joint_names.empty()) {
    for (std::size_t i = 0; i < t.parent.size(); ++i) t.joint_names.push_back("joint" + std::to_string(i));
  }
  t.validate();
  return t;
}

nlohmann::json to_json(const SkeletonTopology& topo) {
  nlohmann::json parents = nlohmann::json::array();
  for (const auto& p : topo.parent) parents.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [a, b] : topo.symmetric_pairs) pairs.push_back({a, b});
  return {{"names", topo.joint_names}, {"parents", parents}, {"root", topo.root}, {"symmetric_pairs", pairs}};
}

SkeletonTopology build_topology(std::string_view preset_or_path) {
  if (preset_or_path == "h36m17") return h36m17();
  std::ifstream in{std::string(preset_or_path)};
  if (!in) throw TopologyError("unknown topology preset or unreadable file: " + std::string(preset_or_path));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw TopologyError(std::string("malformed topology file: ") + e.what());
  }
  return topology_from_json(j);
}

SquareMatrix normalize_symmetric(const SquareMatrix& raw) {
  const std::size_t n = raw.n;
  std::vector<double> row_degree(n, 0.0);
  std::vector<double> col_degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      row_degree[i] += raw(i, j);
      col_degree[j] += raw(i, j);
    }
  }
  SquareMatrix out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (raw(i, j) != 0.0) out(i, j) = raw(i, j) / std::sqrt(row_degree[i] * col_degree[j]);
    }
  }
  return out;
}

namespace {

std::array<SquareMatrix, kCategoryCount> raw_categories(const SkeletonTopology& topo) {
  const std::size_t n = topo.joint_count();
  std::array<SquareMatrix, kCategoryCount> raw = {SquareMatrix(n), SquareMatrix(n), SquareMatrix(n),
                                                  SquareMatrix(n)};
  for (std::size_t i = 0; i < n; ++i) {
    raw[0](i, i) = 1.0;
    if (topo.parent[i]) {
      const std::size_t p = *topo.parent[i];
      raw[1](i, p) = 1.0;
      raw[2](p, i) = 1.0;
    }
  }
  for (const auto& [a, b] : topo.symmetric_pairs) {
    raw[3](a, b) = 1.0;
    raw[3](b, a) = 1.0;
  }
  return raw;
}

}  // namespace

AdjacencySet decompose_adjacency(const SkeletonTopology& topo) {
  topo.validate();
  AdjacencySet set;
  set.raw = raw_categories(topo);
  for (std::size_t k = 0; k < kCategoryCount; ++k) set.normalized[k] = normalize_symmetric(set.raw[k]);
  return set;
}

SquareMatrix merged_adjacency(const SkeletonTopology& topo) {
  topo.validate();
  const auto raw = raw_categories(topo);
  SquareMatrix merged(topo.joint_count());
  for (const auto& m : raw) {
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      if (m.values[i] != 0.0) merged.values[i] = 1.0;
    }
  }
  return normalize_symmetric(merged);
}

nlohmann::json to_json(const AdjacencySet& adjacency) {
  nlohmann::json out = nlohmann::json::object();
  out["joint_count"] = adjacency.joint_count();
  for (std::size_t k = 0; k < kCategoryCount; ++k) {
    const auto& m = adjacency.normalized[k];
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < m.n; ++i) {
      rows.push_back(std::vector<double>(m.values.begin() + i * m.n, m.values.begin() + (i + 1) * m.n));
    }
    out[std::string(kCategoryNames[k])] = rows;
  }
  return out;
}

template <typename T>
void flip_pose_inplace(std::span<T> values, std::size_t dims, const SkeletonTopology& topo) {
  const std::size_t n = topo.joint_count();
  if (dims == 0) throw std::invalid_argument("flip_pose: coordinate dimension must be at least 1");
  if (values.size() % (n * dims) != 0) {
    throw std::invalid_argument("flip_pose: joint axis mismatch (expected multiple of " +
                                std::to_string(n) + " joints x " + std::to_string(dims) + ")");
  }
  const std::size_t poses = values.size() / (n * dims);
  for (std::size_t p = 0; p < poses; ++p) {
    T* pose = values.data() + p * n * dims;
    for (std::size_t j = 0; j < n; ++j) pose[j * dims] = -pose[j * dims];
    for (const auto& [a, b] : topo.symmetric_pairs) {
      for (std::size_t d = 0; d < dims; ++d) std::swap(pose[a * dims + d], pose[b * dims + d]);
    }
  }
}

template void flip_pose_inplace<float>(std::span<float>, std::size_t, const SkeletonTopology&);
template void flip_pose_inplace<double>(std::span<double>, std::size_t, const SkeletonTopology&);

}  // namespace dcgct::graph
