#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dcgct/skeleton.hpp"

using namespace dcgct::graph;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

SkeletonTopology chain(std::size_t n) {
  SkeletonTopology t;
  for (std::size_t i = 0; i < n; ++i) {
    t.joint_names.push_back("j" + std::to_string(i));
    t.parent.push_back(i == 0 ? std::nullopt : std::optional<std::size_t>(i - 1));
  }
  return t;
}

}  // namespace

TEST_CASE("h36m17 preset layout") {
  const auto t = build_topology("h36m17");
  CHECK(t.joint_count() == 17);
  CHECK(t.root == 0);
  const std::vector<int> parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  for (std::size_t i = 0; i < 17; ++i) {
    if (parents[i] < 0) {
      CHECK_FALSE(t.parent[i].has_value());
    } else {
      CHECK(*t.parent[i] == static_cast<std::size_t>(parents[i]));
    }
  }
  CHECK(t.joint_names[15] == "RElbow");
  CHECK(*t.partner(15) == 12);
  CHECK(*t.parent[15] == 14);
  CHECK(t.children(15) == std::vector<std::size_t>{16});
  CHECK_FALSE(t.partner(7).has_value());
}

TEST_CASE("topology validation") {
  CHECK_THROWS_WITH_AS(build_topology("nope"), doctest::Contains("nope"), TopologyError);

  const auto cyclic = write_temp("dcgct_cyclic.json",
                                 R"({"names":["a","b","c"],"parents":[null,2,1],"root":0,"symmetric_pairs":[]})");
  CHECK_THROWS_WITH_AS(build_topology(cyclic.string()), doctest::Contains("cyclic topology"), TopologyError);

  auto t = chain(3);
  t.symmetric_pairs = {{1, 1}};
  CHECK_THROWS_AS(t.validate(), TopologyError);
  t.symmetric_pairs = {{0, 5}};
  CHECK_THROWS_AS(t.validate(), TopologyError);
  t.symmetric_pairs = {{1, 2}, {2, 0}};
  CHECK_THROWS_AS(t.validate(), TopologyError);

  const auto malformed = write_temp("dcgct_malformed.json", "{not json");
  CHECK_THROWS_AS(build_topology(malformed.string()), TopologyError);
}

TEST_CASE("topology JSON round trip") {
  const auto t = h36m17();
  CHECK(topology_from_json(to_json(t)) == t);
  const auto path = write_temp("dcgct_h36m.json", to_json(t).dump());
  CHECK(build_topology(path.string()) == t);
}

TEST_CASE("single joint adjacency") {
  const auto adj = decompose_adjacency(chain(1));
  CHECK(adj[Category::self](0, 0) == 1.0);
  CHECK(adj[Category::toward_root](0, 0) == 0.0);
  CHECK(adj[Category::away_from_root](0, 0) == 0.0);
  CHECK(adj[Category::symmetric](0, 0) == 0.0);
}

TEST_CASE("two joint chain toward-root entry") {
  const auto adj = decompose_adjacency(chain(2));
  const auto& m = adj[Category::toward_root];
  CHECK(m(1, 0) == 1.0);
  CHECK(m(0, 0) == 0.0);
  CHECK(m(0, 1) == 0.0);
  CHECK(m(1, 1) == 0.0);
  CHECK(adj[Category::away_from_root](0, 1) == 1.0);
}

TEST_CASE("h36m17 zero-degree rows") {
  const auto adj = decompose_adjacency(h36m17());
  for (std::size_t j = 0; j < 17; ++j) CHECK(adj[Category::toward_root](0, j) == 0.0);
  for (std::size_t row : {7, 8, 9, 10, 0}) {
    for (std::size_t j = 0; j < 17; ++j) CHECK(adj[Category::symmetric](row, j) == 0.0);
  }
  // Wrists and the head have no children.
  for (std::size_t row : {3, 6, 10, 13, 16}) {
    for (std::size_t j = 0; j < 17; ++j) CHECK(adj[Category::away_from_root](row, j) == 0.0);
  }
}

TEST_CASE("h36m17 normalized values by hand") {
  const auto adj = decompose_adjacency(h36m17());
  // RElbow's parent RShoulder has one child: 1/sqrt(1*1).
  CHECK(adj[Category::toward_root](15, 14) == doctest::Approx(1.0));
  // Spine's parent (pelvis) has three children: 1/sqrt(1*3).
  CHECK(adj[Category::toward_root](7, 0) == doctest::Approx(1.0 / std::sqrt(3.0)));
  // Thorax row in away_from_root: three children, each with one parent.
  CHECK(adj[Category::away_from_root](8, 9) == doctest::Approx(1.0 / std::sqrt(3.0)));
  CHECK(adj[Category::symmetric](15, 12) == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 17; ++i) {
    for (std::size_t j = 0; j < 17; ++j) CHECK(adj[Category::self](i, j) == (i == j ? 1.0 : 0.0));
  }
}

TEST_CASE("row sums") {
  const auto topo = h36m17();
  const auto adj = decompose_adjacency(topo);
  for (std::size_t k = 0; k < kCategoryCount; ++k) {
    for (std::size_t i = 0; i < 17; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 17; ++j) sum += adj.normalized[k](i, j);
      if (static_cast<Category>(k) == Category::away_from_root) {
        CHECK(sum == doctest::Approx(std::sqrt(static_cast<double>(topo.children(i).size()))));
      } else {
        CHECK(sum <= 1.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("merged adjacency equals single-graph normalization") {
  const auto topo = h36m17();
  const auto merged = merged_adjacency(topo);
  // Degrees of the undirected graph with self loops, counted by hand.
  std::vector<double> degree(17, 1.0);
  for (std::size_t i = 0; i < 17; ++i) {
    if (topo.parent[i]) {
      degree[i] += 1.0;
      degree[*topo.parent[i]] += 1.0;
    }
  }
  for (const auto& [a, b] : topo.symmetric_pairs) {
    degree[a] += 1.0;
    degree[b] += 1.0;
  }
  CHECK(degree[8] == 5.0);  // thorax: self, spine, neck, two shoulders
  CHECK(merged(8, 8) == doctest::Approx(1.0 / 5.0));
  CHECK(merged(8, 9) == doctest::Approx(1.0 / std::sqrt(degree[8] * degree[9])));
  CHECK(merged(12, 15) == doctest::Approx(1.0 / std::sqrt(degree[12] * degree[15])));
  CHECK(merged(0, 10) == 0.0);
}

TEST_CASE("decompose is deterministic") {
  const auto a = decompose_adjacency(h36m17());
  const auto b = decompose_adjacency(h36m17());
  for (std::size_t k = 0; k < kCategoryCount; ++k) CHECK(a.normalized[k] == b.normalized[k]);
  const auto j = to_json(a);
  CHECK(j.at("toward_root").size() == 17);
}

TEST_CASE("flip_pose") {
  const auto t = h36m17();
  SUBCASE("symmetric fixed point") {
    std::vector<double> pose(17 * 3, 0.0);
    for (std::size_t j = 0; j < 17; ++j) {
      pose[j * 3 + 1] = 1.0;
      pose[j * 3 + 2] = 2.0;
    }
    CHECK(flip_pose<double>(pose, 3, t) == pose);
  }
  SUBCASE("wrists swap and mirror") {
    std::vector<double> pose(17 * 3, 0.0);
    pose[16 * 3 + 0] = 1;  // RWrist
    pose[16 * 3 + 1] = 2;
    pose[16 * 3 + 2] = 3;
    pose[13 * 3 + 0] = 4;  // LWrist
    pose[13 * 3 + 1] = 5;
    pose[13 * 3 + 2] = 6;
    const auto f = flip_pose<double>(pose, 3, t);
    CHECK(f[16 * 3 + 0] == -4);
    CHECK(f[16 * 3 + 1] == 5);
    CHECK(f[16 * 3 + 2] == 6);
    CHECK(f[13 * 3 + 0] == -1);
    CHECK(f[13 * 3 + 1] == 2);
    CHECK(f[13 * 3 + 2] == 3);
  }
  SUBCASE("involution on random sequences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<float> dist(0.0f, 100.0f);
    std::vector<float> seq(5 * 17 * 2);
    for (auto& v : seq) v = dist(rng);
    const auto once = flip_pose<float>(seq, 2, t);
    CHECK(once != seq);
    CHECK(flip_pose<float>(once, 2, t) == seq);
  }
  SUBCASE("joint axis mismatch") {
    std::vector<double> bad(16 * 3, 0.0);
    CHECK_THROWS_AS(flip_pose<double>(bad, 3, t), std::invalid_argument);
  }
}
