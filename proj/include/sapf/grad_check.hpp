#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sapf/tensor.hpp"

namespace sapf {

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_abs_error = 0.0;
  // max |analytic - numeric| over the tensor, divided by the tensor's largest
  // gradient magnitude. The divisor is floored at the rounding noise of the
  // difference quotient so that exactly-zero gradients (e.g. attention key
  // biases) do not turn noise into a large relative error.
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = true;

  double max_rel_error() const;
};

inline constexpr double kGradCheckFloor = 1e-8;
/// Noise floor = kGradCheckNoiseUlps * eps * max(1, |loss|) / step.
inline constexpr double kGradCheckNoiseUlps = 1e5;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Central-difference check of every element of every tensor in `params`.
/// `loss_fn` must rebuild the graph from the current parameter values and
/// return a scalar. It is evaluated twice at the base point first; differing
/// values abort the check with a ContractError.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const NamedTensors& params,
                           double step = 1e-5, double tolerance = 1e-5);

}  // namespace sapf
