#pragma once

// Continuous integrate-and-fire: per-frame weights are accumulated until they
// reach the threshold, at which point one token-level embedding is emitted as
// the weighted sum of the frames consumed.

#include <cstddef>
#include <vector>

#include "sapf/nn.hpp"
#include "sapf/tensor.hpp"

namespace sapf {

inline constexpr double kDefaultFiringThreshold = 1.0;

/// Accumulations within kFireTolerance * beta of the threshold count as
/// reaching it (fire, zero carry). Absorbs rounding in rescaled weights.
inline constexpr double kFireTolerance = 1e-9;

struct WeightSequence {
  Tensor alpha;  // shape {T}, each entry in [0, 1]

  std::size_t size() const { return alpha.numel(); }
  double total() const;
};

struct FiringPlan {
  double threshold_beta = kDefaultFiringThreshold;
  std::vector<std::size_t> firings;  // frame index (0-based) of each firing, in order
  double residue = 0.0;              // accumulated weight left after the last frame
  Tensor frame_weights;              // N x T share of each frame given to each token
  Tensor embeddings;                 // N x d

  std::size_t num_tokens() const { return firings.size(); }
};

/// One linear layer on the encoder output followed by a sigmoid.
struct WeightPredictor {
  Linear proj;  // d x 1

  WeightPredictor() = default;
  WeightPredictor(ParamStore& store, const std::string& name, std::size_t model_dim);
};

WeightSequence predict_weights(const Tensor& h_asr, const WeightPredictor& predictor);

/// Differentiable firing matrix. Row n holds the share of every frame that
/// token n consumed; both halves of a split frame carry gradient. Firing frame
/// indices and the residue are written to the out-parameters.
Tensor cif_frame_weights(const Tensor& alpha, double beta, std::vector<std::size_t>* firings,
                         double* residue);

FiringPlan integrate_and_fire(const Tensor& h, const WeightSequence& w,
                              double beta = kDefaultFiringThreshold);

/// alpha * (target_len * beta / sum(alpha)). Throws ContractError on a zero sum.
WeightSequence scale_weights(const WeightSequence& w, std::size_t target_len,
                             double beta = kDefaultFiringThreshold);

/// |target_len - sum(alpha)| on the unscaled weights.
Tensor mae_loss(const WeightSequence& w, std::size_t target_len);

}  // namespace sapf
