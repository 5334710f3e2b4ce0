#pragma once

// Finite-difference checks over every differentiable building block and the
// full training objective of a small model. Backs the `grad-check` command.

#include <cstdint>
#include <string>
#include <vector>

#include "sapf/grad_check.hpp"

namespace sapf {

struct GradientCase {
  std::string name;
  GradCheckReport report;
};

struct GradientSuiteOptions {
  std::uint64_t seed = 1;
  double step = 1e-5;
  double op_tolerance = 1e-5;     // primitive ops and layers
  double model_tolerance = 1e-4;  // full objective
  bool include_model = true;
};

struct GradientSuiteResult {
  std::vector<GradientCase> cases;
  bool passed = true;
  double max_rel_error = 0.0;
};

GradientSuiteResult run_gradient_suite(const GradientSuiteOptions& opts = {});

}  // namespace sapf
