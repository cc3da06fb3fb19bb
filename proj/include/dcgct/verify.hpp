#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// Self-check suites shared by the `verify` subcommand and the test binaries.
// Everything runs in 64-bit precision with seed-fixed inputs.
namespace dcgct::verify {

struct CheckResult {
  std::string suite;
  std::string name;
  double value = 0.0;      // measured error or violation count
  double threshold = 0.0;  // passes when value <= threshold
  bool passed = false;
  std::string detail;
};

inline constexpr double kPrimitiveTolerance = 1e-6;
// Composed modules and the full loss accumulate roundoff across many
// primitives, so they use the looser bound.
inline constexpr double kCompositeTolerance = 1e-4;

// Central-difference checks for every primitive, each model building block
// and the end-to-end loss of a tiny model.
std::vector<CheckResult> gradient_suite(std::uint64_t seed);

// Structural properties: adjacency normalization, attention permutation
// equivariance, graph locality, fusion rank bound, softmax / layer-norm
// identities, flip involution, alignment optimality and metric boundaries.
std::vector<CheckResult> invariant_suite(std::uint64_t seed);

bool all_passed(const std::vector<CheckResult>& results);

nlohmann::json to_json(const CheckResult& r);

// One aligned line per check: suite, name, value, threshold, PASS/FAIL.
std::string format_results(const std::vector<CheckResult>& results);

}  // namespace dcgct::verify
