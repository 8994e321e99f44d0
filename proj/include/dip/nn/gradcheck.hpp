#pragma once

#include <dip/nn/tensor.hpp>

#include <cstdint>
#include <functional>

namespace dip::nn {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  // Denominator floor for the relative error |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  // Coordinates checked across all inputs; <= 0 checks every coordinate.
  Index max_coordinates = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  Index checked = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

// Compares reverse-mode gradients of loss() with respect to `inputs` against
// central differences. loss() must rebuild the graph from the inputs' current
// values on every call.
GradCheckResult gradient_check(const std::string& name, const std::vector<Var>& inputs, const std::function<Var()>& loss,
                               const GradCheckOptions& options = {});

}  // namespace dip::nn
