#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "sapf/error.hpp"
#include "sapf/speaker.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace sapf {
namespace {

using testing::gradient_error;
using testing::random_tensor;

std::vector<std::vector<double>> orthonormal(std::size_t k, std::size_t d, std::mt19937_64& rng) {
  return oracle::orthonormal_rows(k, d, rng);
}

SpeakerInventory inventory_from(const std::vector<std::vector<double>>& rows, std::size_t genuine) {
  SpeakerInventory inv;
  for (std::size_t i = 0; i < rows.size(); ++i)
    inv.profiles.push_back(SpeakerProfile::make("s" + std::to_string(i), rows[i]));
  inv.true_count = genuine;
  return inv;
}

double row_sum_error(const SpeakerAttention& att) {
  double worst = 0.0;
  for (std::size_t n = 0; n < att.beta.rows(); ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < att.beta.cols(); ++k) s += att.beta.at(n, k);
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  return worst;
}

TEST(SpeakerProfile, NormalizesAndRejectsZero) {
  auto p = SpeakerProfile::make("a", {3.0, 4.0});
  EXPECT_DOUBLE_EQ(p.vector[0], 0.6);
  EXPECT_DOUBLE_EQ(p.vector[1], 0.8);
  EXPECT_THROW(SpeakerProfile::make("z", {0.0, 0.0}), ContractError);
}

TEST(SpeakerInventory, Validation) {
  SpeakerInventory inv;
  EXPECT_THROW(inv.validate(), ContractError);
  inv.profiles = {SpeakerProfile::make("a", {1, 0}), SpeakerProfile::make("a", {0, 1})};
  inv.true_count = 2;
  EXPECT_THROW(inv.validate(), ContractError);
  inv.profiles[1].id = "b";
  EXPECT_NO_THROW(inv.validate());
  EXPECT_EQ(inv.index_of("b"), 1u);
  EXPECT_EQ(inv.index_of("nobody"), 2u);
  inv.true_count = 3;
  EXPECT_THROW(inv.validate(), ContractError);
  inv.true_count = 2;
  inv.profiles[1].vector = {0.0, 2.0};
  EXPECT_THROW(inv.validate(), ContractError);
}

TEST(SpeakerAttribution, OrthonormalProfilesAreRecoveredExactly) {
  std::mt19937_64 rng(5);
  std::size_t correct = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + trial % 6, d = 6 + trial % 5;
    const auto rows = orthonormal(k, d, rng);
    auto inv = inventory_from(rows, k);
    std::uniform_int_distribution<std::size_t> who(0, k - 1);
    std::uniform_real_distribution<double> gain(0.1, 5.0);
    std::vector<std::size_t> truth(12);
    std::vector<double> q;
    for (auto& t : truth) {
      t = who(rng);
      const double g = gain(rng);
      for (double x : rows[t]) q.push_back(g * x);
    }
    auto scores = cosine_scores(Tensor::from_data({truth.size(), d}, q), inv);
    auto att = attention_weights(scores);
    EXPECT_LT(row_sum_error(att), 1e-9);
    const auto ids = assign_speakers(att, inv);
    for (std::size_t n = 0; n < truth.size(); ++n, ++total)
      correct += ids[n] == inv.profiles[truth[n]].id;
  }
  EXPECT_EQ(correct, total);
}

TEST(SpeakerAttribution, CosineScoresMatchDefinition) {
  auto inv = inventory_from({{1, 0, 0}, {0, 0.6, 0.8}}, 2);
  auto s = cosine_scores(Tensor::matrix({{2, 0, 0}, {1, 1, 0}}), inv);
  EXPECT_NEAR(s.b.at(0, 0), 1.0, 1e-8);
  EXPECT_NEAR(s.b.at(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(s.b.at(1, 0), 1.0 / std::sqrt(2.0), 1e-8);
  EXPECT_NEAR(s.b.at(1, 1), 0.6 / std::sqrt(2.0), 1e-8);
  EXPECT_EQ(s.genuine_cols, 2u);
  // Zero queries stay finite.
  auto z = cosine_scores(Tensor::zeros({1, 3}), inv);
  EXPECT_TRUE(std::isfinite(z.b.at(0, 0)));
  EXPECT_THROW(cosine_scores(Tensor::zeros({1, 4}), inv), DimensionError);
  EXPECT_THROW(cosine_scores(Tensor::zeros({1, 3}), inv, 3), ContractError);
}

TEST(SpeakerAttribution, FillSpeakersRangeAndMask) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = 1 + trial % 3, n = 1 + trial % 7, k_max = k + trial % 4;
    auto inv = inventory_from(orthonormal(k, 5, rng), k);
    auto base = cosine_scores(random_tensor({n, 5}, rng, -1, 1, false), inv);
    auto filled = fill_speakers(base, k_max, trial);
    ASSERT_EQ(filled.cols(), k_max);
    EXPECT_EQ(filled.genuine_cols, k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k_max; ++j) {
        if (j < k) {
          EXPECT_FALSE(filled.filled(i, j));
          EXPECT_EQ(filled.b.at(i, j), base.b.at(i, j));
        } else {
          EXPECT_TRUE(filled.filled(i, j));
          EXPECT_GE(filled.b.at(i, j), -0.5);
          EXPECT_LE(filled.b.at(i, j), 0.5);
        }
      }
    }
    EXPECT_LT(row_sum_error(attention_weights(filled)), 1e-9);
  }
  auto inv = inventory_from({{1, 0}, {0, 1}}, 2);
  auto s = cosine_scores(Tensor::matrix({{1, 0}}), inv);
  EXPECT_THROW(fill_speakers(s, 1, 0), ContractError);
}

TEST(SpeakerAttribution, FilledColumnsNeverAssigned) {
  auto inv = inventory_from({{1, 0}, {0, 1}}, 2);
  CosineScores s = cosine_scores(Tensor::matrix({{-1, 0.01}}), inv);
  auto filled = fill_speakers(s, 6, 1);
  // Whatever the filled values, only genuine columns may be chosen.
  auto ids = assign_speakers(attention_weights(filled), inv);
  EXPECT_EQ(ids[0], "s1");
}

TEST(SpeakerAttribution, WeightedProfileOracle) {
  auto inv = inventory_from({{1, 0, 0}, {0, 1, 0}}, 2);
  SpeakerAttention att{Tensor::matrix({{0.25, 0.5, 0.25}})};  // third column is filled
  auto w = weighted_profile(att, inv);
  EXPECT_DOUBLE_EQ(w.at(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(w.at(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(w.at(0, 2), 0.0);
}

TEST(SpeakerAttribution, InterferingSpeakers) {
  std::mt19937_64 rng(9);
  const auto rows = orthonormal(8, 8, rng);
  std::vector<SpeakerProfile> pool;
  for (std::size_t i = 0; i < rows.size(); ++i)
    pool.push_back(SpeakerProfile::make("p" + std::to_string(i), rows[i]));
  SpeakerInventory inv;
  inv.profiles = {pool[2], pool[5]};
  inv.true_count = 2;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto out = add_interfering(inv, pool, 3, seed);
    ASSERT_EQ(out.size(), 5u);
    EXPECT_EQ(out.true_count, 2u);
    EXPECT_EQ(out.profiles[0].id, "p2");
    EXPECT_EQ(out.profiles[1].id, "p5");
    std::set<SpeakerId> ids;
    for (const auto& p : out.profiles) ids.insert(p.id);
    EXPECT_EQ(ids.size(), 5u);
    EXPECT_NO_THROW(out.validate());
    EXPECT_EQ(add_interfering(inv, pool, 3, seed).profiles[4].id, out.profiles[4].id);
  }
  EXPECT_EQ(add_interfering(inv, pool, 0, 1).size(), 2u);
  EXPECT_THROW(add_interfering(inv, pool, 7, 1), PoolExhaustedError);
}

TEST(SpeakerDecoder, RejectsFrameMismatch) {
  ParamStore store(1);
  SpeakerDecoder dec(store, "spk", AttentionConfig{8, 2, 16}, 4);
  EXPECT_THROW(speaker_decoder_layer1(dec, Tensor::zeros({2, 8}), Tensor::zeros({3, 8}),
                                      Tensor::zeros({4, 8})),
               ContractError);
}

TEST(SpeakerDecoder, GradientThroughScoresAndAttention) {
  ParamStore store(2);
  SpeakerDecoder dec(store, "spk", AttentionConfig{8, 2, 12}, 4);
  std::mt19937_64 rng(11);
  auto inv = inventory_from(orthonormal(3, 4, rng), 3);
  auto e_a = random_tensor({3, 8}, rng);
  auto h_asr = random_tensor({5, 8}, rng);
  auto h_spk = random_tensor({5, 8}, rng);
  std::vector<Tensor> params{e_a, h_asr, h_spk};
  for (const auto& [name, t] : store.params()) params.push_back(t);
  auto fn = [&](const std::vector<Tensor>&) {
    auto e = speaker_decoder_layer2(dec, speaker_decoder_layer1(dec, e_a, h_asr, h_spk), h_spk);
    auto att = attention_weights(cosine_scores(project_query(e, dec.w_spk), inv));
    auto w = weighted_profile(att, inv);
    const std::size_t target[] = {0, 2, 1};
    return add(scale(sum(pick(log_softmax(att.beta, 1), target)), -1.0), sum(mul(w, w)));
  };
  EXPECT_LT(gradient_error(fn, params), 1e-6);
}

}  // namespace
}  // namespace sapf
