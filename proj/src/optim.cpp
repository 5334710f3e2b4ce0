#include "sapf/optim.hpp"

#include <algorithm>
#include <cmath>

#include "sapf/error.hpp"

namespace sapf {

double scheduled_lr(const AdamConfig& cfg, std::size_t step) {
  if (step == 0) step = 1;
  if (cfg.warmup_steps == 0) return cfg.learning_rate;
  const double s = static_cast<double>(step), w = static_cast<double>(cfg.warmup_steps);
  return cfg.learning_rate * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(NamedTensors params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate >= 0.0) || !(cfg_.clip_norm >= 0.0)) {
    throw ConfigError("adam: learning rate and clip norm must be >= 0");
  }
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

Adam::StepInfo Adam::step() {
  StepInfo info;
  double sq = 0.0;
  for (auto& [name, p] : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  info.grad_norm = std::sqrt(sq);
  if (!std::isfinite(info.grad_norm)) throw NumericError("adam: non-finite gradient norm");
  double clip = 1.0;
  if (cfg_.clip_norm > 0.0 && info.grad_norm > cfg_.clip_norm) {
    clip = cfg_.clip_norm / info.grad_norm;
    info.clipped = true;
  }

  ++t_;
  info.lr = scheduled_lr(cfg_, t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      w[j] -= info.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  return info;
}

}  // namespace sapf
