#include "sapf/evaluate.hpp"

#include <limits>

#include "sapf/error.hpp"
#include "sapf/losses.hpp"
#include "sapf/tsot.hpp"

namespace sapf {

namespace {

void check_compatible(const ModelConfig& m, const SynthSpec& s) {
  if (m.vocab_size != s.vocab_size || m.feature_dim != s.feature_dim || m.d_spk != s.d_spk) {
    throw ConfigError("model (vocab " + std::to_string(m.vocab_size) + ", features " +
                      std::to_string(m.feature_dim) + ", d_spk " + std::to_string(m.d_spk) +
                      ") does not match the dataset (vocab " + std::to_string(s.vocab_size) +
                      ", features " + std::to_string(s.feature_dim) + ", d_spk " +
                      std::to_string(s.d_spk) + ")");
  }
}

TokenSequence without(const TokenSequence& tokens, TokenId drop) {
  TokenSequence out;
  for (TokenId t : tokens) {
    if (t != drop) out.push_back(t);
  }
  return out;
}

double mean_length(const RTFReport& r) {
  if (r.per_length_breakdown.empty()) return 0.0;
  double n = 0.0;
  for (const auto& [len, sec] : r.per_length_breakdown) n += static_cast<double>(len);
  return n / static_cast<double>(r.per_length_breakdown.size());
}

}  // namespace

EvalReport evaluate(const SaParaformer& model, const Dataset& data, bool with_separator) {
  const auto& mc = model.config();
  check_compatible(mc, data.spec);
  EvalReport report;
  report.with_separator = with_separator;
  for (const auto& s : data.sessions) {
    SessionResult r;
    r.name = s.name;
    r.hypothesis = model.nar_infer(s.features, s.inventory);
    // Without separators a stray <cc> is scored as an ordinary wrong token
    // rather than rejected as a malformed stream.
    const TokenId cc = with_separator ? mc.cc_token() : std::numeric_limits<TokenId>::max();
    r.sd = sd_cer(reference_transcripts(s.tokens), deserialize(r.hypothesis, with_separator, cc));
    const auto ref = serialize(s.tokens, false, mc.cc_token()).tokens;
    r.cer = edit_align(ref, without(r.hypothesis.tokens, mc.cc_token()));
    report.sd.merge(r.sd);
    report.cer += r.cer;
    report.sessions.push_back(std::move(r));
  }
  report.sd.recompute();
  return report;
}

double validation_ce(const SaParaformer& model, const Dataset& data) {
  const auto& mc = model.config();
  check_compatible(mc, data.spec);
  if (data.sessions.empty()) throw ContractError("validation_ce: dataset is empty");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& s : data.sessions) {
    const auto y = serialize(s.tokens, mc.use_cc_separator, mc.cc_token()).tokens;
    auto [h_asr, h_inter] = model.asr_encode(s.features);
    const WeightSequence alpha =
        scale_weights(model.predict_weights(h_asr), y.size(), mc.cif_threshold);
    const FiringPlan plan = integrate_and_fire(h_asr, alpha, mc.cif_threshold);
    Tensor h_spk = model.speaker_encode(s.features);
    Tensor q = model.speaker_queries(model.speaker_embeddings(plan.embeddings, h_asr, h_spk));
    const SpeakerAttention att = attention_weights(cosine_scores(q, s.inventory));
    Tensor logits = model.asr_decode(plan.embeddings, h_asr, weighted_profile(att, s.inventory));
    total += ce_loss(logits, y).item();
  }
  return total / static_cast<double>(data.sessions.size());
}

BenchReport bench_rtf(const SaParaformer& nar, const ArBaseline& ar, const BenchOptions& opts) {
  const auto& a = nar.config();
  const auto& b = ar.config();
  if (a.encoder_layers != b.encoder_layers || a.decoder_layers != b.decoder_layers ||
      a.speaker_encoder_layers != b.speaker_encoder_layers ||
      a.attn.model_dim != b.attn.model_dim || a.attn.num_heads != b.attn.num_heads ||
      a.attn.ff_dim != b.attn.ff_dim || a.vocab_size != b.vocab_size ||
      a.feature_dim != b.feature_dim || a.d_spk != b.d_spk) {
    throw ConfigError("bench: NAR and AR models differ in size; refusing to compare");
  }
  check_compatible(a, opts.spec);
  if (opts.utterances_per_length == 0) throw ConfigError("bench: need at least one utterance");

  const SynthWorld world(opts.spec);
  BenchReport report;
  for (std::size_t length : opts.lengths) {
    if (length == 0) throw ConfigError("bench: lengths must be positive");
    std::vector<Session> inputs;
    std::vector<std::size_t> frames;
    for (std::size_t i = 0; i < opts.utterances_per_length; ++i) {
      inputs.push_back(world.monologue(opts.seed * 1000003 + length * 101 + i, length));
      frames.push_back(inputs.back().frames());
    }
    BenchRow row;
    row.length = length;
    row.nar = rtf_measure(
        [&](std::size_t i) { return nar.nar_infer(inputs[i].features, inputs[i].inventory).size(); },
        frames, opts.frame_shift_ms);
    row.ar = rtf_measure(
        [&](std::size_t i) {
          return ar.infer(inputs[i].features, inputs[i].inventory, length, true).size();
        },
        frames, opts.frame_shift_ms);
    row.nar_tokens = mean_length(row.nar);
    row.ar_tokens = mean_length(row.ar);
    row.ratio = row.ar.total_inference_seconds / row.nar.total_inference_seconds;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace sapf
