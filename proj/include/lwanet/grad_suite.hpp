#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace lwanet {

/// Finite-difference check results for one op or block over many random
/// shapes, all in 64-bit.
struct GradSuiteEntry {
  std::string name;
  int cases = 0;
  double max_rel_error = 0.0;
  int resamples = 0;
  int64_t coordinates = 0;
  double seconds = 0.0;
};

/// Every differentiable op, composite block and the focal loss at
/// gamma 0, 2 and 6. `only` restricts the run to names containing it.
std::vector<GradSuiteEntry> run_grad_suite(int cases_per_op = 20, uint64_t seed = 1,
                                           const std::string& only = "");

nlohmann::ordered_json grad_suite_json(const std::vector<GradSuiteEntry>& entries, double threshold);

}  // namespace lwanet
