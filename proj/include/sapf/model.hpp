#pragma once

// SA-Paraformer assembly: ASR and speaker encoders, CIF predictor, speaker
// decoder, speaker-fused parallel ASR decoder, glancing sampler, and an
// autoregressive baseline with the same dimensions for latency comparison.

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sapf/cif.hpp"
#include "sapf/nn.hpp"
#include "sapf/speaker.hpp"
#include "sapf/tensor.hpp"
#include "sapf/types.hpp"

namespace sapf {

struct ModelConfig {
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t speaker_encoder_layers = 2;
  AttentionConfig attn;
  std::size_t vocab_size = 40;
  std::size_t d_spk = 16;
  std::size_t feature_dim = 32;
  std::size_t inter_ctc_layer = 1;  // tap after this many encoder layers
  double sampling_factor_lambda = 1.1;
  bool use_cc_separator = false;
  double cif_threshold = kDefaultFiringThreshold;
  // Inference only: weight of a zero frame appended after the last frame, so
  // a leftover accumulation of at least (threshold - tail) still fires.
  // 0 leaves the residue unemitted.
  double cif_tail_threshold = 0.5;
  // Diagnostic: drop self-attention from decoder layers 2..L so positions
  // are decoded independently.
  bool decoder_self_attention = true;

  /// Reserved ids at the top of the vocabulary.
  TokenId cc_token() const { return vocab_size - 1; }
  TokenId eos_token() const { return vocab_size - 2; }
  /// Ordinary tokens are [0, num_word_tokens()).
  std::size_t num_word_tokens() const { return vocab_size - 2; }
  /// CTC blank is appended after the vocabulary.
  std::size_t ctc_blank() const { return vocab_size; }

  void validate() const;
};

struct EncoderLayer {
  LayerNorm norm_attn;
  MultiHeadAttention self_attn;
  LayerNorm norm_ff;
  FeedForward ff;

  EncoderLayer() = default;
  EncoderLayer(ParamStore& store, const std::string& name, const AttentionConfig& cfg);
  Tensor operator()(const Tensor& x) const;
};

/// Input projection + sinusoidal positions + pre-norm self-attention layers
/// + final norm.
struct Encoder {
  Linear input;
  std::vector<EncoderLayer> layers;
  LayerNorm final_norm;

  Encoder() = default;
  Encoder(ParamStore& store, const std::string& name, const AttentionConfig& cfg,
          std::size_t feature_dim, std::size_t num_layers);

  /// Returns the final (normalized) output; writes the raw output after
  /// `tap_after` layers to *tap when requested.
  Tensor operator()(const Tensor& x, std::size_t tap_after = 0, Tensor* tap = nullptr) const;
};

/// Layer 1 is cross-attention + speaker-fused FF; layers 2..L are
/// self-attention (unmasked) + cross-attention + FF.
struct AsrDecoder {
  struct FirstLayer {
    LayerNorm norm_src;
    MultiHeadAttention src_attn;
    LayerNorm norm_ff;
    FeedForward ff;
  };
  struct Layer {
    LayerNorm norm_self;
    MultiHeadAttention self_attn;
    LayerNorm norm_src;
    MultiHeadAttention src_attn;
    LayerNorm norm_ff;
    FeedForward ff;
  };
  FirstLayer first;
  std::vector<Layer> rest;
  LayerNorm final_norm;
  Linear out;  // model_dim x vocab

  AsrDecoder() = default;
  AsrDecoder(ParamStore& store, const std::string& name, const ModelConfig& cfg);
};

/// Everything one training forward produces. First-pass values are computed
/// with gradient recording off.
struct ForwardTrace {
  Tensor h_asr;
  Tensor h_spk;
  Tensor h_inter;
  WeightSequence alpha;  // unscaled
  Tensor e_a;
  Tensor first_pass_logits;
  TokenSequence first_pass_tokens;
  std::size_t first_pass_errors = 0;
  std::vector<std::size_t> replaced_positions;
  Tensor e_s;
  Tensor second_pass_logits;
  CosineScores cosine_scores;
  SpeakerAttention speaker_attention;
  Tensor weighted_profiles;
};

struct TrainOptions {
  bool fill_speakers = false;
  std::size_t k_max = 0;           // pad target for filled scores (0 = no padding)
  std::uint64_t fill_seed = 0;
  std::uint64_t sampler_seed = 0;
  std::optional<double> sampling_factor;  // overrides the configured lambda
};

/// Replaces min(N, ceil(lambda * d)) uniformly chosen rows of e_a by the
/// embeddings of the ground-truth tokens at those rows, d being the edit
/// distance between y_true and y_first.
Tensor glm_sample(const Tensor& e_a, std::span<const TokenId> y_true,
                  std::span<const TokenId> y_first, const Tensor& token_embed, double lambda,
                  std::uint64_t seed, std::vector<std::size_t>* replaced = nullptr);

/// Number of rows glm_sample replaces.
std::size_t glm_replacement_count(std::size_t n, std::size_t distance, double lambda);

class SaParaformer {
 public:
  SaParaformer(const ModelConfig& cfg, std::uint64_t seed);

  SaParaformer(const SaParaformer&) = delete;
  SaParaformer& operator=(const SaParaformer&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  /// (H_asr, H_inter).
  std::pair<Tensor, Tensor> asr_encode(const Tensor& x) const;
  Tensor speaker_encode(const Tensor& x) const;
  WeightSequence predict_weights(const Tensor& h_asr) const;

  /// E_spk: both speaker decoder layers.
  Tensor speaker_embeddings(const Tensor& e_a, const Tensor& h_asr, const Tensor& h_spk) const;
  Tensor speaker_queries(const Tensor& e_spk) const;

  /// Logits N x V (pre-softmax). Counts as one decoder invocation.
  Tensor asr_decode(const Tensor& e, const Tensor& h_asr, const Tensor& d_bar) const;

  ForwardTrace two_pass_train_forward(const Tensor& x, std::span<const TokenId> y_true,
                                      const SpeakerInventory& inv, const TrainOptions& opts) const;

  /// Single parallel pass: CIF fixes N, one decoder invocation.
  Hypothesis nar_infer(const Tensor& x, const SpeakerInventory& inv) const;

  Tensor ctc_logits(const Tensor& h_asr) const { return ctc_head_(h_asr); }
  Tensor inter_ctc_logits(const Tensor& h_inter) const { return inter_ctc_head_(h_inter); }
  const Linear& ctc_head() const { return ctc_head_; }
  const Linear& inter_ctc_head() const { return inter_ctc_head_; }
  const Tensor& token_embedding() const { return token_embed_; }
  const SpeakerDecoder& speaker_decoder() const { return spk_decoder_; }
  const WeightPredictor& predictor() const { return predictor_; }

  std::size_t decoder_invocations() const { return decoder_calls_.load(); }
  void reset_invocations() { decoder_calls_ = 0; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Encoder asr_encoder_;
  Encoder spk_encoder_;
  WeightPredictor predictor_;
  SpeakerDecoder spk_decoder_;
  AsrDecoder decoder_;
  Tensor token_embed_;  // vocab x model_dim
  Linear ctc_head_;
  Linear inter_ctc_head_;
  mutable std::atomic<std::size_t> decoder_calls_{0};
};

/// Greedy token-by-token baseline with the same dimensions. Each step re-runs
/// the causal decoder over the whole prefix (no caching) and attributes the
/// new token with a speaker cross-attention head.
class ArBaseline {
 public:
  ArBaseline(const ModelConfig& cfg, std::uint64_t seed);

  ArBaseline(const ArBaseline&) = delete;
  ArBaseline& operator=(const ArBaseline&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  struct TeacherForced {
    Tensor logits;  // (N+1) x V, targets are y_1..y_N, eos
    CosineScores scores;  // N x K for the N target tokens
  };
  TeacherForced forward(const Tensor& x, std::span<const TokenId> y_true,
                        const SpeakerInventory& inv) const;

  /// Stops on eos or after max_len emitted tokens. With `ignore_eos` the loop
  /// always runs max_len steps (latency benchmarking).
  Hypothesis infer(const Tensor& x, const SpeakerInventory& inv, std::size_t max_len,
                   bool ignore_eos = false) const;

  std::size_t decoder_invocations() const { return decoder_calls_.load(); }
  void reset_invocations() { decoder_calls_ = 0; }

 private:
  Tensor decode_states(std::span<const TokenId> prefix, const Tensor& h_asr) const;
  Tensor speaker_query(const Tensor& states, const Tensor& h_asr, const Tensor& h_spk) const;

  ModelConfig cfg_;
  ParamStore store_;
  Encoder asr_encoder_;
  Encoder spk_encoder_;
  Tensor token_embed_;
  struct Layer {
    LayerNorm norm_self;
    MultiHeadAttention self_attn;
    LayerNorm norm_src;
    MultiHeadAttention src_attn;
    LayerNorm norm_ff;
    FeedForward ff;
  };
  std::vector<Layer> layers_;
  LayerNorm final_norm_;
  Linear out_;
  LayerNorm spk_norm_;
  MultiHeadAttention spk_attn_;
  LayerNorm spk_norm_ff_;
  FeedForward spk_ff_;
  Tensor w_spk_;
  mutable std::atomic<std::size_t> decoder_calls_{0};
};

/// Row-wise argmax (lowest index on ties) and its softmax probability.
std::pair<TokenSequence, std::vector<double>> argmax_rows(const Tensor& logits);

}  // namespace sapf
