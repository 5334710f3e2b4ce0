#include "sapf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "sapf/error.hpp"

namespace sapf {

namespace {

// Independent streams for world construction and each session.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint64_t kWorldStream = 0x5eed;
constexpr std::uint64_t kSessionStream = 0x5e55;
constexpr std::uint64_t kNoiseStream = 0x7015e;
constexpr std::uint64_t kMonologueStream = 0x3010;
constexpr std::size_t kOffsetTrials = 256;

std::vector<double> unit_gaussian(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = nd(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::string speaker_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "spk%02zu", i);
  return buf;
}

// Tokens of one utterance, neighbours distinct so token boundaries show in
// the frames.
std::vector<TokenId> draw_tokens(std::mt19937_64& rng, std::size_t count, std::size_t words) {
  std::vector<TokenId> out;
  std::uniform_int_distribution<TokenId> pick(0, words - 1);
  while (out.size() < count) {
    const TokenId t = pick(rng);
    if (!out.empty() && out.back() == t && words > 1) continue;
    out.push_back(t);
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("synth spec: " + what); };
  if (num_sessions == 0) fail("num_sessions must be positive");
  if (min_speakers == 0 || min_speakers > max_speakers) fail("empty speaker range");
  if (min_tokens == 0 || min_tokens > max_tokens) fail("empty token range");
  if (min_frames_per_token == 0 || min_frames_per_token > max_frames_per_token) {
    fail("empty frames-per-token range");
  }
  if (vocab_size < 4) fail("vocab_size must leave at least two word tokens");
  if (!(overlap_ratio_target >= 0.0 && overlap_ratio_target <= 1.0)) {
    fail("overlap target must be in [0, 1]");
  }
  if (!(overlap_tolerance > 0.0)) fail("overlap tolerance must be positive");
  if (d_spk == 0 || feature_dim < d_spk) fail("need 0 < d_spk <= feature_dim");
  if (speaker_pool < max_speakers) fail("speaker pool smaller than max_speakers");
  if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
}

void SynthSpec::read(const KeyValueConfig& cfg, const std::string& p) {
  cfg.get(p + "num_sessions", num_sessions);
  cfg.get(p + "min_speakers", min_speakers);
  cfg.get(p + "max_speakers", max_speakers);
  cfg.get(p + "vocab_size", vocab_size);
  cfg.get(p + "min_tokens", min_tokens);
  cfg.get(p + "max_tokens", max_tokens);
  cfg.get(p + "min_frames_per_token", min_frames_per_token);
  cfg.get(p + "max_frames_per_token", max_frames_per_token);
  cfg.get(p + "overlap_ratio_target", overlap_ratio_target);
  cfg.get(p + "overlap_tolerance", overlap_tolerance);
  cfg.get(p + "feature_dim", feature_dim);
  cfg.get(p + "d_spk", d_spk);
  cfg.get(p + "speaker_pool", speaker_pool);
  cfg.get(p + "noise_std", noise_std);
  cfg.get(p + "seed", seed);
}

void SynthSpec::write(KeyValueConfig& cfg, const std::string& p) const {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  cfg.set(p + "num_sessions", std::to_string(num_sessions));
  cfg.set(p + "min_speakers", std::to_string(min_speakers));
  cfg.set(p + "max_speakers", std::to_string(max_speakers));
  cfg.set(p + "vocab_size", std::to_string(vocab_size));
  cfg.set(p + "min_tokens", std::to_string(min_tokens));
  cfg.set(p + "max_tokens", std::to_string(max_tokens));
  cfg.set(p + "min_frames_per_token", std::to_string(min_frames_per_token));
  cfg.set(p + "max_frames_per_token", std::to_string(max_frames_per_token));
  cfg.set(p + "overlap_ratio_target", num(overlap_ratio_target));
  cfg.set(p + "overlap_tolerance", num(overlap_tolerance));
  cfg.set(p + "feature_dim", std::to_string(feature_dim));
  cfg.set(p + "d_spk", std::to_string(d_spk));
  cfg.set(p + "speaker_pool", std::to_string(speaker_pool));
  cfg.set(p + "noise_std", num(noise_std));
  cfg.set(p + "seed", std::to_string(seed));
}

double overlap_ratio(std::span<const TimedToken> tokens) {
  std::size_t end = 0;
  for (const auto& t : tokens) end = std::max(end, t.end_frame);
  std::vector<std::vector<SpeakerId>> active(end);
  for (const auto& t : tokens) {
    for (std::size_t f = t.start_frame; f < t.end_frame; ++f) {
      auto& a = active[f];
      if (std::find(a.begin(), a.end(), t.speaker) == a.end()) a.push_back(t.speaker);
    }
  }
  std::size_t speech = 0, overlapped = 0;
  for (const auto& a : active) {
    speech += !a.empty();
    overlapped += a.size() >= 2;
  }
  return speech == 0 ? 0.0 : static_cast<double>(overlapped) / static_cast<double>(speech);
}

SynthWorld::SynthWorld(const SynthSpec& spec) : spec_(spec) {
  spec_.validate();
  auto rng = stream(spec_.seed, kWorldStream);
  for (std::size_t k = 0; k < spec_.speaker_pool; ++k) {
    pool_.push_back(SpeakerProfile::make(speaker_name(k), unit_gaussian(rng, spec_.d_spk)));
  }
  const std::size_t F = spec_.feature_dim, words = spec_.num_word_tokens();
  std::vector<double> emb;
  emb.reserve(words * F);
  for (std::size_t v = 0; v < words; ++v) {
    auto e = unit_gaussian(rng, F);
    emb.insert(emb.end(), e.begin(), e.end());
  }
  token_embed_ = Tensor::from_data({words, F}, std::move(emb));

  // Orthonormal F x d_spk lift by Gram-Schmidt on Gaussian columns.
  std::vector<std::vector<double>> cols;
  std::normal_distribution<double> nd;
  while (cols.size() < spec_.d_spk) {
    std::vector<double> c(F);
    for (auto& x : c) x = nd(rng);
    for (const auto& b : cols) {
      const double dot = std::inner_product(c.begin(), c.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < F; ++i) c[i] -= dot * b[i];
    }
    const double norm = std::sqrt(std::inner_product(c.begin(), c.end(), c.begin(), 0.0));
    if (norm < 1e-6) continue;
    for (auto& x : c) x /= norm;
    cols.push_back(std::move(c));
  }
  std::vector<double> lift(F * spec_.d_spk);
  for (std::size_t i = 0; i < F; ++i) {
    for (std::size_t j = 0; j < spec_.d_spk; ++j) lift[i * spec_.d_spk + j] = cols[j][i];
  }
  lift_ = Tensor::from_data({F, spec_.d_spk}, std::move(lift));
}

Tensor SynthWorld::render(std::span<const TimedToken> tokens, std::size_t frames,
                          std::uint64_t noise_seed) const {
  const std::size_t F = spec_.feature_dim, D = spec_.d_spk;
  std::vector<double> x(frames * F, 0.0);
  auto emb = token_embed_.data();
  auto lift = lift_.data();
  for (const auto& t : tokens) {
    if (t.token >= spec_.num_word_tokens()) throw ContractError("render: not a word token");
    if (t.end_frame > frames) throw ContractError("render: token extends past the session");
    const auto it = std::find_if(pool_.begin(), pool_.end(),
                                 [&](const SpeakerProfile& p) { return p.id == t.speaker; });
    if (it == pool_.end()) throw ContractError("render: unknown speaker " + t.speaker);
    std::vector<double> v(F);
    for (std::size_t i = 0; i < F; ++i) {
      double s = emb[t.token * F + i];
      for (std::size_t j = 0; j < D; ++j) s += lift[i * D + j] * it->vector[j];
      v[i] = s;
    }
    for (std::size_t f = t.start_frame; f < t.end_frame; ++f) {
      for (std::size_t i = 0; i < F; ++i) x[f * F + i] += v[i];
    }
  }
  if (spec_.noise_std > 0.0) {
    auto rng = stream(spec_.seed, kNoiseStream, noise_seed);
    std::normal_distribution<double> nd(0.0, spec_.noise_std);
    for (auto& v : x) v += nd(rng);
  }
  return Tensor::from_data({frames, F}, std::move(x));
}

Session SynthWorld::session(std::uint64_t index) const {
  auto rng = stream(spec_.seed, kSessionStream, index);
  std::uniform_int_distribution<std::size_t> num_spk(spec_.min_speakers, spec_.max_speakers);
  const std::size_t K = num_spk(rng);

  std::vector<std::size_t> order(pool_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(K);

  // One utterance per speaker, laid out relative to its own start.
  struct Utterance {
    std::vector<TimedToken> tokens;
    std::size_t length = 0;
  };
  std::vector<Utterance> utts(K);
  std::uniform_int_distribution<std::size_t> num_tok(spec_.min_tokens, spec_.max_tokens);
  std::uniform_int_distribution<std::size_t> dur(spec_.min_frames_per_token,
                                                 spec_.max_frames_per_token);
  for (std::size_t k = 0; k < K; ++k) {
    const auto ids = draw_tokens(rng, num_tok(rng), spec_.num_word_tokens());
    std::size_t t = 0;
    for (TokenId id : ids) {
      const std::size_t d = dur(rng);
      utts[k].tokens.push_back({id, pool_[order[k]].id, t, t + d});
      t += d;
    }
    utts[k].length = t;
  }

  // Each utterance after the first starts somewhere in [0, end of speech so
  // far]; keep the trial whose overlap is closest to the target.
  auto layout = [&](const std::vector<std::size_t>& starts) {
    std::vector<TimedToken> all;
    for (std::size_t k = 0; k < K; ++k) {
      for (auto tok : utts[k].tokens) {
        tok.start_frame += starts[k];
        tok.end_frame += starts[k];
        all.push_back(tok);
      }
    }
    return all;
  };
  std::vector<std::size_t> best(K, 0);
  double best_gap = std::numeric_limits<double>::infinity();
  if (K == 1) {
    best_gap = 0.0;
  } else {
    std::vector<std::size_t> starts(K, 0);
    for (std::size_t trial = 0; trial < kOffsetTrials; ++trial) {
      std::size_t end = utts[0].length;
      for (std::size_t k = 1; k < K; ++k) {
        starts[k] = std::uniform_int_distribution<std::size_t>(0, end)(rng);
        end = std::max(end, starts[k] + utts[k].length);
      }
      const double gap = std::fabs(overlap_ratio(layout(starts)) - spec_.overlap_ratio_target);
      if (gap < best_gap) {
        best_gap = gap;
        best = starts;
      }
    }
  }
  if (best_gap > spec_.overlap_tolerance) {
    throw ConfigError("synth: session " + std::to_string(index) + " cannot reach overlap " +
                      std::to_string(spec_.overlap_ratio_target));
  }

  Session s;
  char name[32];
  std::snprintf(name, sizeof name, "sess_%04llu", static_cast<unsigned long long>(index));
  s.name = name;
  s.tokens = layout(best);
  std::size_t frames = 0;
  for (const auto& t : s.tokens) frames = std::max(frames, t.end_frame);
  s.features = render(s.tokens, frames, index);
  for (std::size_t k = 0; k < K; ++k) s.inventory.profiles.push_back(pool_[order[k]]);
  s.inventory.true_count = K;
  return s;
}

Session SynthWorld::monologue(std::uint64_t index, std::size_t num_tokens) const {
  auto rng = stream(spec_.seed, kMonologueStream, index);
  const SpeakerProfile& spk = pool_[std::uniform_int_distribution<std::size_t>(0, pool_.size() - 1)(rng)];
  std::uniform_int_distribution<std::size_t> dur(spec_.min_frames_per_token,
                                                 spec_.max_frames_per_token);
  Session s;
  s.name = "mono_" + std::to_string(index);
  std::size_t t = 0;
  for (TokenId id : draw_tokens(rng, num_tokens, spec_.num_word_tokens())) {
    const std::size_t d = dur(rng);
    s.tokens.push_back({id, spk.id, t, t + d});
    t += d;
  }
  s.features = render(s.tokens, t, (1ULL << 40) + index);
  s.inventory.profiles.push_back(spk);
  s.inventory.true_count = 1;
  return s;
}

Session generate_session(const SynthSpec& spec, std::uint64_t index) {
  return SynthWorld(spec).session(index);
}

Dataset generate_dataset(const SynthSpec& spec, std::uint64_t first_index, std::size_t count) {
  SynthWorld world(spec);
  Dataset ds;
  ds.spec = spec;
  ds.first_index = first_index;
  ds.pool = world.pool();
  for (std::size_t i = 0; i < count; ++i) ds.sessions.push_back(world.session(first_index + i));
  return ds;
}

}  // namespace sapf
