#include "sapf/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sapf/error.hpp"

namespace sapf {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.rel_error);
  return m;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, const NamedTensors& params,
                           double step, double tolerance) {
  GradCheckReport report;
  report.tolerance = tolerance;
  if (params.empty()) return report;

  NamedTensors ps = params;
  for (auto& [name, t] : ps) t.zero_grad();
  const Tensor base = loss_fn();
  const double again = loss_fn().item();
  if (base.item() != again) {
    throw ContractError("grad_check aborted: loss is not deterministic (" +
                        std::to_string(base.item()) + " vs " + std::to_string(again) + ")");
  }
  backward(base);
  const double floor = std::max(
      kGradCheckFloor, kGradCheckNoiseUlps * std::numeric_limits<double>::epsilon() *
                           std::max(1.0, std::fabs(base.item())) / step);

  for (auto& [name, t] : ps) {
    GradCheckEntry entry;
    entry.name = name;
    entry.elements = t.numel();
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto values = t.mutable_data();
    double scale = floor;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      double up;
      double down;
      {
        NoGradGuard ng;
        up = loss_fn().item();
        values[i] = saved - step;
        down = loss_fn().item();
      }
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      entry.max_abs_error = std::max(entry.max_abs_error, std::fabs(numeric - analytic[i]));
      scale = std::max({scale, std::fabs(numeric), std::fabs(analytic[i])});
    }
    entry.rel_error = entry.max_abs_error / scale;
    if (!(entry.rel_error < tolerance)) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace sapf
