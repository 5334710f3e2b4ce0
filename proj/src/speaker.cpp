#include "sapf/speaker.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace sapf {

SpeakerProfile SpeakerProfile::make(SpeakerId id, std::vector<double> values) {
  double norm = 0.0;
  for (double v : values) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw ContractError("speaker profile '" + id + "' has zero norm");
  for (auto& v : values) v /= norm;
  return {std::move(id), std::move(values)};
}

std::size_t SpeakerInventory::index_of(const SpeakerId& id) const {
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    if (profiles[k].id == id) return k;
  }
  return profiles.size();
}

Tensor SpeakerInventory::matrix(std::size_t count) const {
  const std::size_t d = dim();
  std::vector<double> m;
  m.reserve(count * d);
  for (std::size_t k = 0; k < count; ++k) {
    m.insert(m.end(), profiles.at(k).vector.begin(), profiles.at(k).vector.end());
  }
  return Tensor::from_data({count, d}, std::move(m));
}

void SpeakerInventory::validate() const {
  if (profiles.empty()) throw ContractError("speaker inventory is empty");
  if (true_count > profiles.size()) throw ContractError("inventory true_count exceeds its size");
  std::set<SpeakerId> ids;
  for (const auto& p : profiles) {
    if (!ids.insert(p.id).second) throw ContractError("duplicate speaker id: " + p.id);
    if (p.vector.size() != dim()) throw DimensionError("inconsistent profile dims for " + p.id);
    double norm = 0.0;
    for (double v : p.vector) norm += v * v;
    if (std::fabs(std::sqrt(norm) - 1.0) > 1e-6) {
      throw ContractError("speaker profile '" + p.id + "' is not unit-normalized");
    }
  }
}

SpeakerDecoder::SpeakerDecoder(ParamStore& store, const std::string& name,
                               const AttentionConfig& cfg, std::size_t d_spk)
    : norm_src(store, name + ".layer1.norm_src", cfg.model_dim),
      src_attn(store, name + ".layer1.src_attn", cfg),
      norm_ff1(store, name + ".layer1.norm_ff", cfg.model_dim),
      ff1(store, name + ".layer1.ff", cfg),
      norm_spk(store, name + ".layer2.norm_spk", cfg.model_dim),
      spk_attn(store, name + ".layer2.spk_attn", cfg),
      norm_ff2(store, name + ".layer2.norm_ff", cfg.model_dim),
      ff2(store, name + ".layer2.ff", cfg),
      w_spk(store.create(name + ".w_spk", {cfg.model_dim, d_spk}, Init::kFanIn)) {}

Tensor speaker_decoder_layer1(const SpeakerDecoder& dec, const Tensor& e_a, const Tensor& h_asr,
                              const Tensor& h_spk) {
  if (h_asr.rows() != h_spk.rows()) {
    throw ContractError("speaker decoder: H_asr has " + std::to_string(h_asr.rows()) +
                        " frames but H_spk has " + std::to_string(h_spk.rows()));
  }
  Tensor e1 = add(e_a, dec.src_attn(dec.norm_src(e_a), h_asr, h_spk));
  return add(e1, dec.ff1(dec.norm_ff1(e1)));
}

Tensor speaker_decoder_layer2(const SpeakerDecoder& dec, const Tensor& e_as, const Tensor& h_spk) {
  Tensor e1 = add(e_as, dec.spk_attn(dec.norm_spk(e_as), h_spk, h_spk));
  return add(e1, dec.ff2(dec.norm_ff2(e1)));
}

Tensor project_query(const Tensor& e_spk, const Tensor& w_spk) { return matmul(e_spk, w_spk); }

CosineScores cosine_scores(const Tensor& q, const SpeakerInventory& inv) {
  return cosine_scores(q, inv, inv.size());
}

CosineScores cosine_scores(const Tensor& q, const SpeakerInventory& inv, std::size_t count) {
  if (count == 0 || count > inv.size()) throw ContractError("cosine_scores: bad profile count");
  if (q.cols() != inv.dim()) {
    throw DimensionError("cosine_scores: query dim " + std::to_string(q.cols()) +
                         " vs profile dim " + std::to_string(inv.dim()));
  }
  CosineScores s;
  s.b = cosine_similarity(q, inv.matrix(count));
  s.fill_mask.assign(q.rows() * count, 0);
  s.genuine_cols = count;
  return s;
}

SpeakerAttention attention_weights(const CosineScores& scores) { return {softmax(scores.b, 1)}; }

Tensor weighted_profile(const SpeakerAttention& att, const SpeakerInventory& inv) {
  const std::size_t k = att.beta.cols();
  const std::size_t real = std::min(k, inv.size());
  Tensor profiles = inv.matrix(real);
  if (real < k) {
    profiles = concat_rows({profiles, Tensor::zeros({k - real, inv.dim()})});
  }
  return matmul(att.beta, profiles);
}

CosineScores fill_speakers(const CosineScores& scores, std::size_t k_max, std::uint64_t seed) {
  const std::size_t n = scores.rows(), k = scores.cols();
  if (k_max < k) {
    throw ContractError("fill_speakers: k_max " + std::to_string(k_max) + " < K " +
                        std::to_string(k));
  }
  if (k_max == k) return scores;
  const std::size_t pad = k_max - k;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  std::vector<double> fill(n * pad);
  for (auto& v : fill) v = dist(rng);

  CosineScores out;
  out.b = concat_cols({scores.b, Tensor::from_data({n, pad}, std::move(fill))});
  out.genuine_cols = scores.genuine_cols;
  out.fill_mask.assign(n * k_max, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out.fill_mask[i * k_max + j] = scores.fill_mask[i * k + j];
  return out;
}

SpeakerInventory add_interfering(const SpeakerInventory& inv, std::span<const SpeakerProfile> pool,
                                 std::size_t m, std::uint64_t seed) {
  if (m == 0) return inv;
  std::vector<std::size_t> candidates;
  std::set<SpeakerId> seen;
  for (const auto& p : inv.profiles) seen.insert(p.id);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (seen.insert(pool[i].id).second) candidates.push_back(i);
  }
  if (candidates.size() < m) {
    throw PoolExhaustedError("add_interfering: need " + std::to_string(m) +
                             " new profiles, pool has " + std::to_string(candidates.size()));
  }
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, candidates.size() - 1);
    std::swap(candidates[i], candidates[pick(rng)]);
  }
  SpeakerInventory out = inv;
  for (std::size_t i = 0; i < m; ++i) out.profiles.push_back(pool[candidates[i]]);
  return out;
}

std::vector<SpeakerId> assign_speakers(const SpeakerAttention& att, const SpeakerInventory& inv) {
  const std::size_t n = att.beta.rows(), k = att.beta.cols();
  const std::size_t usable = std::min(k, inv.size());
  std::vector<SpeakerId> ids;
  ids.reserve(n);
  auto b = att.beta.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < usable; ++j) {
      if (b[i * k + j] > b[i * k + best]) best = j;
    }
    ids.push_back(inv.profiles.at(best).id);
  }
  return ids;
}

}  // namespace sapf
