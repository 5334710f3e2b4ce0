#pragma once

// Adam with linear warmup followed by inverse-square-root decay, and
// global-norm gradient clipping.

#include <cstddef>
#include <vector>

#include "sapf/grad_check.hpp"

namespace sapf {

struct AdamConfig {
  double learning_rate = 2e-3;  // peak, reached at the end of warmup
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::size_t warmup_steps = 200;
  double clip_norm = 5.0;  // 0 disables clipping
};

/// Learning rate for 1-based `step`.
double scheduled_lr(const AdamConfig& cfg, std::size_t step);

class Adam {
 public:
  Adam(NamedTensors params, AdamConfig cfg);

  struct StepInfo {
    double lr = 0.0;
    double grad_norm = 0.0;
    bool clipped = false;
  };
  /// Applies one update from the accumulated gradients. Does not zero them.
  StepInfo step();

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }

  // Moment buffers, one per parameter in registration order (checkpointing).
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  NamedTensors params_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace sapf
