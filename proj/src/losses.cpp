#include "sapf/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sapf/cif.hpp"
#include "sapf/error.hpp"

namespace sapf {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || lambda1 + lambda2 > 1.0 + 1e-12) {
    throw ConfigError("loss weights need lambda1, lambda2 >= 0 and lambda1 + lambda2 <= 1 (got " +
                      std::to_string(lambda1) + ", " + std::to_string(lambda2) + ")");
  }
}

Tensor ce_loss(const Tensor& logits, std::span<const TokenId> targets) {
  if (targets.empty() && (!logits.defined() || logits.rows() == 0 || logits.numel() == 0)) {
    return Tensor::scalar(0.0);
  }
  if (logits.dim() != 2 || logits.rows() != targets.size()) {
    throw DimensionError("ce_loss: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  for (TokenId t : targets) {
    if (t >= logits.cols()) throw ContractError("ce_loss: target id out of range");
  }
  std::vector<std::size_t> idx(targets.begin(), targets.end());
  return scale(mean(pick(log_softmax(logits, 1), idx)), -1.0);
}

CtcResult ctc_loss(const Tensor& frame_logits, std::span<const TokenId> target) {
  if (frame_logits.dim() != 2 || frame_logits.cols() < 2) {
    throw DimensionError("ctc_loss: expected T x (V+1) logits, got " +
                         shape_str(frame_logits.shape()));
  }
  const std::size_t T = frame_logits.rows(), C = frame_logits.cols(), blank = C - 1;
  const std::size_t L = target.size(), S = 2 * L + 1;
  for (TokenId t : target) {
    if (t >= blank) throw ContractError("ctc_loss: target contains the blank or an unknown id");
  }

  // Log-probabilities.
  std::vector<double> lp(T * C);
  {
    auto u = frame_logits.data();
    for (std::size_t t = 0; t < T; ++t) {
      const double* row = u.data() + t * C;
      const double m = *std::max_element(row, row + C);
      double z = 0.0;
      for (std::size_t k = 0; k < C; ++k) z += std::exp(row[k] - m);
      const double lz = m + std::log(z);
      for (std::size_t k = 0; k < C; ++k) lp[t * C + k] = row[k] - lz;
    }
  }
  auto label = [&](std::size_t s) { return s % 2 == 0 ? blank : target[s / 2]; };
  auto skip_ok = [&](std::size_t s) {  // may jump from s-2 into s
    return s >= 2 && label(s) != blank && label(s) != label(s - 2);
  };

  double log_p = kNegInf;
  std::vector<double> alpha, beta;
  if (T > 0) {
    alpha.assign(T * S, kNegInf);
    alpha[0] = lp[blank];
    if (S > 1) alpha[1] = lp[label(1)];
    for (std::size_t t = 1; t < T; ++t) {
      for (std::size_t s = 0; s < S; ++s) {
        double a = alpha[(t - 1) * S + s];
        if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
        if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
        if (a != kNegInf) alpha[t * S + s] = a + lp[t * C + label(s)];
      }
    }
    log_p = alpha[(T - 1) * S + S - 1];
    if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);
  } else if (L == 0) {
    log_p = 0.0;
  }

  if (log_p == kNegInf) {
    return {make_result({}, {std::numeric_limits<double>::infinity()}, {frame_logits},
                        [](std::span<const double>) {}),
            false};
  }
  if (T == 0) return {Tensor::scalar(0.0), true};

  // beta[t,s]: log-probability of completing from (t, s), emissions after t.
  beta.assign(T * S, kNegInf);
  beta[(T - 1) * S + S - 1] = 0.0;
  if (S > 1) beta[(T - 1) * S + S - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s] + lp[(t + 1) * C + label(s)];
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1] + lp[(t + 1) * C + label(s + 1)]);
      if (s + 2 < S && skip_ok(s + 2)) {
        b = log_add(b, beta[(t + 1) * S + s + 2] + lp[(t + 1) * C + label(s + 2)]);
      }
      beta[t * S + s] = b;
    }
  }

  // d(-log p)/d logits[t,k] = softmax[t,k] - occupancy of label k at t.
  std::vector<double> dlogits(T * C);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < C; ++k) dlogits[t * C + k] = std::exp(lp[t * C + k]);
    for (std::size_t s = 0; s < S; ++s) {
      const double occ = alpha[t * S + s] + beta[t * S + s] - log_p;
      if (occ != kNegInf) dlogits[t * C + label(s)] -= std::exp(occ);
    }
  }
  Tensor loss = make_result({}, {-log_p}, {frame_logits},
                            [x = frame_logits, d = std::move(dlogits)](std::span<const double> g) mutable {
                              if (!x.requires_grad()) return;
                              auto gx = x.mutable_grad();
                              for (std::size_t i = 0; i < d.size(); ++i) gx[i] += g[0] * d[i];
                            });
  return {loss, true};
}

CtcResult inter_ctc_loss(const Tensor& h_inter, const Linear& head,
                         std::span<const TokenId> target) {
  return ctc_loss(head(h_inter), target);
}

Tensor speaker_loss(const CosineScores& scores, std::span<const std::size_t> true_indices) {
  if (true_indices.size() != scores.rows()) {
    throw DimensionError("speaker_loss: " + std::to_string(true_indices.size()) +
                         " labels for " + std::to_string(scores.rows()) + " score rows");
  }
  if (true_indices.empty()) return Tensor::scalar(0.0);
  for (std::size_t n = 0; n < true_indices.size(); ++n) {
    const std::size_t k = true_indices[n];
    if (k >= scores.cols() || k >= scores.genuine_cols || scores.filled(n, k)) {
      throw ContractError("speaker_loss: token " + std::to_string(n) +
                          " labelled with a column that is not a genuine speaker");
    }
  }
  return scale(sum(pick(log_softmax(scores.b, 1), true_indices)), -1.0);
}

LossBreakdown composite_loss(const Tensor& mae, const Tensor& ctc, const Tensor& inter_ctc,
                             const Tensor& ce, const Tensor& speaker, const LossWeights& w) {
  w.validate();
  LossBreakdown out{mae, ctc, inter_ctc, ce, speaker, {}};
  Tensor total = add(mae, scale(ctc, w.lambda1));
  total = add(total, scale(inter_ctc, w.lambda2));
  total = add(total, scale(ce, 1.0 - w.lambda1 - w.lambda2));
  out.total = add(total, speaker);
  return out;
}

namespace {

Tensor training_ctc(const CtcResult& r) {
  return r.feasible ? r.loss : Tensor::scalar(kInfeasibleCtcPenalty);
}

}  // namespace

LossBreakdown sa_paraformer_objective(const SaParaformer& model, const ForwardTrace& trace,
                                      std::span<const TokenId> y_true,
                                      std::span<const std::size_t> speaker_indices,
                                      const LossWeights& w, double speaker_weight,
                                      ObjectiveStatus* status) {
  const CtcResult ctc = ctc_loss(model.ctc_logits(trace.h_asr), y_true);
  const CtcResult inter = inter_ctc_loss(trace.h_inter, model.inter_ctc_head(), y_true);
  if (status) *status = {ctc.feasible, inter.feasible};
  Tensor spk = speaker_loss(trace.cosine_scores, speaker_indices);
  if (speaker_weight != 1.0) spk = scale(spk, speaker_weight);
  return composite_loss(mae_loss(trace.alpha, y_true.size()), training_ctc(ctc),
                        training_ctc(inter), ce_loss(trace.second_pass_logits, y_true), spk, w);
}

Tensor ar_baseline_objective(const ArBaseline& model, const ArBaseline::TeacherForced& tf,
                             std::span<const TokenId> y_true,
                             std::span<const std::size_t> speaker_indices) {
  TokenSequence targets(y_true.begin(), y_true.end());
  targets.push_back(model.config().eos_token());
  Tensor loss = ce_loss(tf.logits, targets);
  if (!y_true.empty()) loss = add(loss, speaker_loss(tf.scores, speaker_indices));
  return loss;
}

}  // namespace sapf
