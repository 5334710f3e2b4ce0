#include "sapf/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sapf/error.hpp"
#include "sapf/metrics.hpp"

namespace sapf {

void ModelConfig::validate() const {
  attn.validate();
  if (encoder_layers < 2 || inter_ctc_layer < 1 || inter_ctc_layer >= encoder_layers) {
    throw ConfigError("model: need 1 <= inter_ctc_layer < encoder_layers (got " +
                      std::to_string(inter_ctc_layer) + ", " + std::to_string(encoder_layers) + ")");
  }
  if (decoder_layers < 1 || speaker_encoder_layers < 1) {
    throw ConfigError("model: decoder and speaker encoder need at least one layer");
  }
  if (vocab_size < 3) throw ConfigError("model: vocab_size must leave room for eos and <cc>");
  if (d_spk == 0 || feature_dim == 0) throw ConfigError("model: d_spk and feature_dim must be positive");
  if (!(sampling_factor_lambda >= 0.0)) throw ConfigError("model: sampling factor must be >= 0");
  if (!(cif_threshold > 0.0)) throw ConfigError("model: CIF threshold must be positive");
  if (!(cif_tail_threshold >= 0.0 && cif_tail_threshold < cif_threshold)) {
    throw ConfigError("model: CIF tail threshold must be in [0, threshold)");
  }
}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& name, const AttentionConfig& cfg)
    : norm_attn(store, name + ".norm_attn", cfg.model_dim),
      self_attn(store, name + ".self_attn", cfg),
      norm_ff(store, name + ".norm_ff", cfg.model_dim),
      ff(store, name + ".ff", cfg) {}

Tensor EncoderLayer::operator()(const Tensor& x) const {
  Tensor n = norm_attn(x);
  Tensor y = add(x, self_attn(n, n, n));
  return add(y, ff(norm_ff(y)));
}

Encoder::Encoder(ParamStore& store, const std::string& name, const AttentionConfig& cfg,
                 std::size_t feature_dim, std::size_t num_layers)
    : input(store, name + ".input", feature_dim, cfg.model_dim) {
  for (std::size_t i = 0; i < num_layers; ++i) {
    layers.emplace_back(store, name + ".layer" + std::to_string(i), cfg);
  }
  final_norm = LayerNorm(store, name + ".final_norm", cfg.model_dim);
}

Tensor Encoder::operator()(const Tensor& x, std::size_t tap_after, Tensor* tap) const {
  const std::size_t d = input.weight.shape()[1];
  Tensor h = add(input(x), sinusoidal_positions(x.rows(), d));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (tap && i + 1 == tap_after) *tap = h;
  }
  return final_norm(h);
}

AsrDecoder::AsrDecoder(ParamStore& store, const std::string& name, const ModelConfig& cfg) {
  const auto& a = cfg.attn;
  first.norm_src = LayerNorm(store, name + ".layer0.norm_src", a.model_dim);
  first.src_attn = MultiHeadAttention(store, name + ".layer0.src_attn", a);
  first.norm_ff = LayerNorm(store, name + ".layer0.norm_ff", a.model_dim);
  first.ff = FeedForward(store, name + ".layer0.ff", a);
  for (std::size_t l = 1; l < cfg.decoder_layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Layer layer;
    layer.norm_self = LayerNorm(store, p + ".norm_self", a.model_dim);
    layer.self_attn = MultiHeadAttention(store, p + ".self_attn", a);
    layer.norm_src = LayerNorm(store, p + ".norm_src", a.model_dim);
    layer.src_attn = MultiHeadAttention(store, p + ".src_attn", a);
    layer.norm_ff = LayerNorm(store, p + ".norm_ff", a.model_dim);
    layer.ff = FeedForward(store, p + ".ff", a);
    rest.push_back(std::move(layer));
  }
  final_norm = LayerNorm(store, name + ".final_norm", a.model_dim);
  out = Linear(store, name + ".out", a.model_dim, cfg.vocab_size);
}

std::pair<TokenSequence, std::vector<double>> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), v = logits.cols();
  TokenSequence tokens(n);
  std::vector<double> probs(n);
  auto d = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = d.data() + i * v;
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j) {
      if (row[j] > row[best]) best = j;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - row[best]);
    tokens[i] = best;
    probs[i] = 1.0 / z;
  }
  return {tokens, probs};
}

std::size_t glm_replacement_count(std::size_t n, std::size_t distance, double lambda) {
  const double raw = lambda * static_cast<double>(distance);
  if (!(raw > 0.0)) return 0;
  // The small offset keeps exact products such as 1.1 * 10 from rounding up.
  const auto want = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(n, want);
}

Tensor glm_sample(const Tensor& e_a, std::span<const TokenId> y_true,
                  std::span<const TokenId> y_first, const Tensor& token_embed, double lambda,
                  std::uint64_t seed, std::vector<std::size_t>* replaced) {
  const std::size_t n = e_a.rows();
  if (y_true.size() != n) {
    throw ContractError("glm_sample: " + std::to_string(y_true.size()) + " targets for " +
                        std::to_string(n) + " embeddings");
  }
  if (lambda < 0.0) throw ConfigError("glm_sample: sampling factor must be >= 0");
  if (replaced) replaced->clear();
  const std::size_t count = glm_replacement_count(n, edit_distance(y_true, y_first), lambda);
  if (count == 0) return e_a;

  std::vector<std::size_t> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pos[i], pos[pick(rng)]);
  }
  pos.resize(count);
  std::sort(pos.begin(), pos.end());
  if (replaced) *replaced = pos;

  std::vector<std::size_t> index(n);
  std::iota(index.begin(), index.end(), 0);
  for (std::size_t p : pos) index[p] = n + p;
  std::vector<std::size_t> targets(y_true.begin(), y_true.end());
  Tensor e_t = gather_rows(token_embed, targets);
  return gather_rows(concat_rows({e_a, e_t}), index);
}

SaParaformer::SaParaformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  const auto& a = cfg_.attn;
  asr_encoder_ = Encoder(store_, "asr_encoder", a, cfg_.feature_dim, cfg_.encoder_layers);
  spk_encoder_ = Encoder(store_, "spk_encoder", a, cfg_.feature_dim, cfg_.speaker_encoder_layers);
  predictor_ = WeightPredictor(store_, "predictor", a.model_dim);
  spk_decoder_ = SpeakerDecoder(store_, "spk_decoder", a, cfg_.d_spk);
  decoder_ = AsrDecoder(store_, "asr_decoder", cfg_);
  token_embed_ = store_.create("token_embed", {cfg_.vocab_size, a.model_dim}, Init::kUnit);
  ctc_head_ = Linear(store_, "ctc_head", a.model_dim, cfg_.vocab_size + 1);
  inter_ctc_head_ = Linear(store_, "inter_ctc_head", a.model_dim, cfg_.vocab_size + 1);
}

std::pair<Tensor, Tensor> SaParaformer::asr_encode(const Tensor& x) const {
  if (x.rows() == 0) throw ContractError("asr_encode: input has no frames");
  if (x.cols() != cfg_.feature_dim) {
    throw DimensionError("asr_encode: feature dim " + std::to_string(x.cols()) + ", expected " +
                         std::to_string(cfg_.feature_dim));
  }
  Tensor inter;
  Tensor h = asr_encoder_(x, cfg_.inter_ctc_layer, &inter);
  return {h, inter};
}

Tensor SaParaformer::speaker_encode(const Tensor& x) const {
  if (x.rows() == 0) throw ContractError("speaker_encode: input has no frames");
  return spk_encoder_(x);
}

WeightSequence SaParaformer::predict_weights(const Tensor& h_asr) const {
  return sapf::predict_weights(h_asr, predictor_);
}

Tensor SaParaformer::speaker_embeddings(const Tensor& e_a, const Tensor& h_asr,
                                        const Tensor& h_spk) const {
  Tensor e_as = speaker_decoder_layer1(spk_decoder_, e_a, h_asr, h_spk);
  return speaker_decoder_layer2(spk_decoder_, e_as, h_spk);
}

Tensor SaParaformer::speaker_queries(const Tensor& e_spk) const {
  return project_query(e_spk, spk_decoder_.w_spk);
}

Tensor SaParaformer::asr_decode(const Tensor& e, const Tensor& h_asr, const Tensor& d_bar) const {
  ++decoder_calls_;
  const std::size_t n = e.rows();
  if (d_bar.rows() != n) {
    throw ContractError("asr_decode: " + std::to_string(d_bar.rows()) + " profiles for " +
                        std::to_string(n) + " positions");
  }
  if (n == 0) return Tensor::zeros({0, cfg_.vocab_size});

  const auto& L1 = decoder_.first;
  Tensor x = add(e, L1.src_attn(L1.norm_src(e), h_asr, h_asr));
  // The same W_spk that maps E_spk to speaker space maps profiles back.
  Tensor fused = add(x, matmul(d_bar, transpose(spk_decoder_.w_spk)));
  x = add(x, L1.ff(L1.norm_ff(fused)));
  for (const auto& layer : decoder_.rest) {
    if (cfg_.decoder_self_attention) {
      Tensor s = layer.norm_self(x);
      x = add(x, layer.self_attn(s, s, s));
    }
    x = add(x, layer.src_attn(layer.norm_src(x), h_asr, h_asr));
    x = add(x, layer.ff(layer.norm_ff(x)));
  }
  return decoder_.out(decoder_.final_norm(x));
}

ForwardTrace SaParaformer::two_pass_train_forward(const Tensor& x, std::span<const TokenId> y_true,
                                                  const SpeakerInventory& inv,
                                                  const TrainOptions& opts) const {
  if (y_true.empty()) throw ContractError("two_pass_train_forward: empty target");
  ForwardTrace tr;
  std::tie(tr.h_asr, tr.h_inter) = asr_encode(x);
  tr.h_spk = speaker_encode(x);
  tr.alpha = predict_weights(tr.h_asr);

  const double beta = cfg_.cif_threshold;
  const WeightSequence scaled = scale_weights(tr.alpha, y_true.size(), beta);
  FiringPlan plan = integrate_and_fire(tr.h_asr, scaled, beta);
  if (plan.num_tokens() != y_true.size()) {
    throw ContractError("two_pass_train_forward: scaled weights fired " +
                        std::to_string(plan.num_tokens()) + " tokens for a target of " +
                        std::to_string(y_true.size()));
  }
  tr.e_a = plan.embeddings;

  Tensor q = speaker_queries(speaker_embeddings(tr.e_a, tr.h_asr, tr.h_spk));
  tr.cosine_scores = cosine_scores(q, inv);
  if (opts.fill_speakers && opts.k_max > tr.cosine_scores.cols()) {
    tr.cosine_scores = fill_speakers(tr.cosine_scores, opts.k_max, opts.fill_seed);
  }
  tr.speaker_attention = attention_weights(tr.cosine_scores);
  tr.weighted_profiles = weighted_profile(tr.speaker_attention, inv);

  {
    NoGradGuard no_grad;
    tr.first_pass_logits = asr_decode(tr.e_a, tr.h_asr, tr.weighted_profiles);
  }
  tr.first_pass_tokens = argmax_rows(tr.first_pass_logits).first;
  tr.first_pass_errors = edit_distance(y_true, tr.first_pass_tokens);

  tr.e_s = glm_sample(tr.e_a, y_true, tr.first_pass_tokens, token_embed_,
                      opts.sampling_factor.value_or(cfg_.sampling_factor_lambda), opts.sampler_seed,
                      &tr.replaced_positions);
  tr.second_pass_logits = asr_decode(tr.e_s, tr.h_asr, tr.weighted_profiles);
  return tr;
}

Hypothesis SaParaformer::nar_infer(const Tensor& x, const SpeakerInventory& inv) const {
  NoGradGuard no_grad;
  Hypothesis hyp;
  auto [h_asr, h_inter] = asr_encode(x);
  WeightSequence alpha = predict_weights(h_asr);
  Tensor h_fire = h_asr;
  if (cfg_.cif_tail_threshold > 0.0) {
    h_fire = concat_rows({h_asr, Tensor::zeros({1, h_asr.cols()})});
    alpha.alpha = reshape(concat_cols({alpha.alpha, Tensor::vector({cfg_.cif_tail_threshold})}),
                          {alpha.size() + 1});
  }
  const FiringPlan plan = integrate_and_fire(h_fire, alpha, cfg_.cif_threshold);
  if (plan.num_tokens() == 0) return hyp;

  Tensor h_spk = speaker_encode(x);
  Tensor q = speaker_queries(speaker_embeddings(plan.embeddings, h_asr, h_spk));
  const std::size_t genuine = inv.true_count > 0 ? inv.true_count : inv.size();
  const SpeakerAttention att = attention_weights(cosine_scores(q, inv, genuine));
  Tensor d_bar = weighted_profile(att, inv);
  Tensor logits = asr_decode(plan.embeddings, h_asr, d_bar);

  std::tie(hyp.tokens, hyp.scores) = argmax_rows(logits);
  hyp.speaker_ids = assign_speakers(att, inv);
  return hyp;
}

// ---------------------------------------------------------------------------
// Autoregressive baseline
// ---------------------------------------------------------------------------

ArBaseline::ArBaseline(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  const auto& a = cfg_.attn;
  asr_encoder_ = Encoder(store_, "asr_encoder", a, cfg_.feature_dim, cfg_.encoder_layers);
  spk_encoder_ = Encoder(store_, "spk_encoder", a, cfg_.feature_dim, cfg_.speaker_encoder_layers);
  token_embed_ = store_.create("token_embed", {cfg_.vocab_size, a.model_dim}, Init::kUnit);
  for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) {
    const std::string p = "ar_decoder.layer" + std::to_string(l);
    Layer layer;
    layer.norm_self = LayerNorm(store_, p + ".norm_self", a.model_dim);
    layer.self_attn = MultiHeadAttention(store_, p + ".self_attn", a);
    layer.norm_src = LayerNorm(store_, p + ".norm_src", a.model_dim);
    layer.src_attn = MultiHeadAttention(store_, p + ".src_attn", a);
    layer.norm_ff = LayerNorm(store_, p + ".norm_ff", a.model_dim);
    layer.ff = FeedForward(store_, p + ".ff", a);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = LayerNorm(store_, "ar_decoder.final_norm", a.model_dim);
  out_ = Linear(store_, "ar_decoder.out", a.model_dim, cfg_.vocab_size);
  spk_norm_ = LayerNorm(store_, "ar_speaker.norm_src", a.model_dim);
  spk_attn_ = MultiHeadAttention(store_, "ar_speaker.src_attn", a);
  spk_norm_ff_ = LayerNorm(store_, "ar_speaker.norm_ff", a.model_dim);
  spk_ff_ = FeedForward(store_, "ar_speaker.ff", a);
  w_spk_ = store_.create("ar_speaker.w_spk", {a.model_dim, cfg_.d_spk}, Init::kFanIn);
}

Tensor ArBaseline::decode_states(std::span<const TokenId> prefix, const Tensor& h_asr) const {
  std::vector<std::size_t> ids(prefix.begin(), prefix.end());
  const std::size_t n = ids.size();
  Tensor x = add(gather_rows(token_embed_, ids), sinusoidal_positions(n, cfg_.attn.model_dim));
  const Tensor mask = causal_mask(n);
  for (const auto& layer : layers_) {
    Tensor s = layer.norm_self(x);
    x = add(x, layer.self_attn(s, s, s, &mask));
    x = add(x, layer.src_attn(layer.norm_src(x), h_asr, h_asr));
    x = add(x, layer.ff(layer.norm_ff(x)));
  }
  return final_norm_(x);
}

Tensor ArBaseline::speaker_query(const Tensor& states, const Tensor& h_asr,
                                 const Tensor& h_spk) const {
  Tensor e = add(states, spk_attn_(spk_norm_(states), h_asr, h_spk));
  e = add(e, spk_ff_(spk_norm_ff_(e)));
  return matmul(e, w_spk_);
}

ArBaseline::TeacherForced ArBaseline::forward(const Tensor& x, std::span<const TokenId> y_true,
                                              const SpeakerInventory& inv) const {
  Tensor h_asr = asr_encoder_(x);
  Tensor h_spk = spk_encoder_(x);
  TokenSequence input;
  input.push_back(cfg_.eos_token());
  input.insert(input.end(), y_true.begin(), y_true.end());
  ++decoder_calls_;
  Tensor states = decode_states(input, h_asr);
  TeacherForced out;
  out.logits = out_(states);
  if (!y_true.empty()) {
    Tensor q = speaker_query(slice_rows(states, 0, y_true.size()), h_asr, h_spk);
    out.scores = cosine_scores(q, inv);
  }
  return out;
}

Hypothesis ArBaseline::infer(const Tensor& x, const SpeakerInventory& inv, std::size_t max_len,
                             bool ignore_eos) const {
  if (max_len == 0) throw ContractError("ar_baseline_infer: max_len must be >= 1");
  NoGradGuard no_grad;
  Tensor h_asr = asr_encoder_(x);
  Tensor h_spk = spk_encoder_(x);
  const std::size_t genuine = inv.true_count > 0 ? inv.true_count : inv.size();
  const Tensor profiles = inv.matrix(genuine);

  Hypothesis hyp;
  TokenSequence prefix{cfg_.eos_token()};
  while (hyp.tokens.size() < max_len) {
    ++decoder_calls_;
    Tensor states = decode_states(prefix, h_asr);
    Tensor last = slice_rows(states, states.rows() - 1, 1);
    Tensor logits = out_(last);
    if (ignore_eos) logits.mutable_data()[cfg_.eos_token()] = -1e30;
    auto [tok, prob] = argmax_rows(logits);
    if (tok[0] == cfg_.eos_token()) break;

    Tensor scores = cosine_similarity(speaker_query(last, h_asr, h_spk), profiles);
    std::size_t best = 0;
    for (std::size_t k = 1; k < genuine; ++k) {
      if (scores.at(0, k) > scores.at(0, best)) best = k;
    }
    hyp.tokens.push_back(tok[0]);
    hyp.scores.push_back(prob[0]);
    hyp.speaker_ids.push_back(inv.profiles[best].id);
    prefix.push_back(tok[0]);
  }
  return hyp;
}

}  // namespace sapf
