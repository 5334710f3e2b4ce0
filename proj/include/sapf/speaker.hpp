#pragma once

// Speaker attribution: the two-layer speaker decoder, cosine scoring against a
// speaker inventory, attention-weighted profiles, and the two inventory
// augmentations used in training (filled scores and interfering speakers).

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sapf/error.hpp"
#include "sapf/nn.hpp"
#include "sapf/tensor.hpp"
#include "sapf/types.hpp"

namespace sapf {

struct SpeakerProfile {
  SpeakerId id;
  std::vector<double> vector;  // unit L2 norm

  /// Normalizes `values` to unit length. Throws ContractError on a zero vector.
  static SpeakerProfile make(SpeakerId id, std::vector<double> values);
};

struct SpeakerInventory {
  std::vector<SpeakerProfile> profiles;
  std::size_t true_count = 0;  // genuine speakers occupy the prefix

  std::size_t size() const { return profiles.size(); }
  std::size_t dim() const { return profiles.empty() ? 0 : profiles.front().vector.size(); }
  /// Index of `id`, or size() when absent.
  std::size_t index_of(const SpeakerId& id) const;
  /// First `count` profiles stacked as a count x d_spk constant.
  Tensor matrix(std::size_t count) const;
  Tensor matrix() const { return matrix(size()); }
  /// K >= 1, unique ids, consistent dims, unit norms, true_count <= K.
  void validate() const;
};

class PoolExhaustedError : public ContractError {
 public:
  using ContractError::ContractError;
};

struct CosineScores {
  Tensor b;                            // N x K
  std::vector<std::uint8_t> fill_mask; // N x K, 1 marks a filled-in entry
  std::size_t genuine_cols = 0;        // columns backed by inventory profiles

  std::size_t rows() const { return b.rows(); }
  std::size_t cols() const { return b.cols(); }
  bool filled(std::size_t n, std::size_t k) const { return fill_mask[n * cols() + k] != 0; }
};

struct SpeakerAttention {
  Tensor beta;  // N x K, rows sum to one
};

/// Layer 1: cross-attention with query E_a, key H_asr, value H_spk, then FF.
/// Layer 2: cross-attention with key = value = H_spk, then FF.
/// Sublayers are pre-normalized; residuals are x + sublayer(x).
struct SpeakerDecoder {
  LayerNorm norm_src;
  MultiHeadAttention src_attn;
  LayerNorm norm_ff1;
  FeedForward ff1;
  LayerNorm norm_spk;
  MultiHeadAttention spk_attn;
  LayerNorm norm_ff2;
  FeedForward ff2;
  Tensor w_spk;  // model_dim x d_spk

  SpeakerDecoder() = default;
  SpeakerDecoder(ParamStore& store, const std::string& name, const AttentionConfig& cfg,
                 std::size_t d_spk);
};

Tensor speaker_decoder_layer1(const SpeakerDecoder& dec, const Tensor& e_a, const Tensor& h_asr,
                              const Tensor& h_spk);
Tensor speaker_decoder_layer2(const SpeakerDecoder& dec, const Tensor& e_as, const Tensor& h_spk);

/// q_n = W_spk applied to E_spk row n.
Tensor project_query(const Tensor& e_spk, const Tensor& w_spk);

/// Cosine of each query against the first `count` inventory profiles
/// (all of them when count is omitted). Zero-norm queries are guarded by 1e-8.
CosineScores cosine_scores(const Tensor& q, const SpeakerInventory& inv);
CosineScores cosine_scores(const Tensor& q, const SpeakerInventory& inv, std::size_t count);

/// Row-wise softmax over the raw scores (filled columns included).
SpeakerAttention attention_weights(const CosineScores& scores);

/// Sum_k beta[n,k] d_k over inventory columns; filled columns have no profile.
Tensor weighted_profile(const SpeakerAttention& att, const SpeakerInventory& inv);

/// Pads every row to k_max columns with i.i.d. uniform[-0.5, 0.5] constants.
CosineScores fill_speakers(const CosineScores& scores, std::size_t k_max, std::uint64_t seed);

/// Appends m pool profiles absent from `inv`, sampled without replacement.
SpeakerInventory add_interfering(const SpeakerInventory& inv, std::span<const SpeakerProfile> pool,
                                 std::size_t m, std::uint64_t seed);

/// Per-token argmax over inventory columns; ties go to the lowest index.
std::vector<SpeakerId> assign_speakers(const SpeakerAttention& att, const SpeakerInventory& inv);

}  // namespace sapf
