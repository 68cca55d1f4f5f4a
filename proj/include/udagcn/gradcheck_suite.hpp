#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "udagcn/gradcheck.hpp"

namespace udagcn {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckCase {
  std::string name;
  GradCheckResult result;

  bool passed() const { return result.passed(kGradCheckTolerance); }
};

/// Every primitive op and every composite loss against central differences on
/// seeded micro inputs (8×8 images, two-sample batches). Instance-graph
/// adjacencies are held fixed at their initial values, matching backward().
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace udagcn
