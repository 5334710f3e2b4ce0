#pragma once

// Training objective: token cross-entropy, frame-level CTC (main and
// intermediate), speaker cross-entropy over cosine scores, the CIF quantity
// loss, and their weighted sum.

#include <span>
#include <vector>

#include "sapf/model.hpp"
#include "sapf/speaker.hpp"
#include "sapf/tensor.hpp"
#include "sapf/types.hpp"

namespace sapf {

/// Weight of CTC (lambda1) and inter-CTC (lambda2); CE gets the remainder.
struct LossWeights {
  double lambda1 = 0.3;
  double lambda2 = 0.3;

  /// Throws ConfigError unless both are >= 0 and they sum to at most 1.
  void validate() const;
};

struct LossBreakdown {
  Tensor mae;
  Tensor ctc;
  Tensor inter_ctc;
  Tensor ce;
  Tensor speaker;
  Tensor total;
};

/// Stand-in for an infeasible CTC instance during training.
inline constexpr double kInfeasibleCtcPenalty = 1e4;

/// Mean over positions of -log softmax(logits[n])[targets[n]]. Empty input
/// gives a zero scalar.
Tensor ce_loss(const Tensor& logits, std::span<const TokenId> targets);

struct CtcResult {
  Tensor loss;            // scalar; +inf when infeasible
  bool feasible = true;
};

/// -log p(target | frames) with the blank in the last column of the T x (V+1)
/// logits. Infeasible alignments are reported, not thrown.
CtcResult ctc_loss(const Tensor& frame_logits, std::span<const TokenId> target);

/// ctc_loss on head(h_inter).
CtcResult inter_ctc_loss(const Tensor& h_inter, const Linear& head,
                         std::span<const TokenId> target);

/// Sum over tokens of the softmax cross-entropy of the true speaker column.
/// A true index beyond the genuine columns, or on a filled entry, is a
/// ContractError.
Tensor speaker_loss(const CosineScores& scores, std::span<const std::size_t> true_indices);

/// total = mae + l1*ctc + l2*inter_ctc + (1-l1-l2)*ce + speaker.
LossBreakdown composite_loss(const Tensor& mae, const Tensor& ctc, const Tensor& inter_ctc,
                             const Tensor& ce, const Tensor& speaker, const LossWeights& w);

struct ObjectiveStatus {
  bool ctc_feasible = true;
  bool inter_ctc_feasible = true;
};

/// Full objective for one training forward. `speaker_weight` scales the
/// speaker term before it enters the sum (0 for speaker-agnostic pretraining).
LossBreakdown sa_paraformer_objective(const SaParaformer& model, const ForwardTrace& trace,
                                      std::span<const TokenId> y_true,
                                      std::span<const std::size_t> speaker_indices,
                                      const LossWeights& w, double speaker_weight = 1.0,
                                      ObjectiveStatus* status = nullptr);

/// Teacher-forced CE over y_1..y_N, eos plus the speaker term.
Tensor ar_baseline_objective(const ArBaseline& model, const ArBaseline::TeacherForced& tf,
                             std::span<const TokenId> y_true,
                             std::span<const std::size_t> speaker_indices);

}  // namespace sapf
