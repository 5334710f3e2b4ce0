#include <gtest/gtest.h>

#include <chrono>
#include <random>
#include <set>

#include "sapf/error.hpp"
#include "sapf/grad_check.hpp"
#include "sapf/losses.hpp"
#include "sapf/metrics.hpp"
#include "sapf/model.hpp"
#include "test_util.hpp"

namespace sapf {
namespace {

using testing::random_tensor;

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.attn = {8, 2, 16};
  cfg.vocab_size = 9;
  cfg.d_spk = 4;
  cfg.feature_dim = 6;
  return cfg;
}

SpeakerInventory basis_inventory(std::size_t k, std::size_t d, std::size_t genuine) {
  SpeakerInventory inv;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> v(d, 0.0);
    v[i % d] = 1.0;
    inv.profiles.push_back(SpeakerProfile::make("s" + std::to_string(i), v));
  }
  inv.true_count = genuine;
  return inv;
}

TEST(ModelConfig, Validation) {
  auto cfg = tiny_config();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.cc_token(), 8u);
  EXPECT_EQ(cfg.eos_token(), 7u);
  EXPECT_EQ(cfg.ctc_blank(), 9u);
  auto bad = cfg;
  bad.inter_ctc_layer = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.attn.num_heads = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.vocab_size = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.cif_tail_threshold = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.sampling_factor_lambda = -0.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(GlmSampler, ReplacementCount) {
  EXPECT_EQ(glm_replacement_count(10, 0, 1.1), 0u);
  EXPECT_EQ(glm_replacement_count(10, 3, 1.1), 4u);   // ceil(3.3)
  EXPECT_EQ(glm_replacement_count(10, 10, 1.1), 10u); // capped at N
  EXPECT_EQ(glm_replacement_count(20, 10, 1.1), 11u); // 11.000000000000002 -> 11
  EXPECT_EQ(glm_replacement_count(10, 5, 0.0), 0u);
  EXPECT_EQ(glm_replacement_count(10, 3, 1.0), 3u);
  EXPECT_EQ(glm_replacement_count(10, 3, 0.7), 3u);   // ceil(2.1)
}

TEST(GlmSampler, ReplacesExactlyTheChosenRows) {
  std::mt19937_64 rng(4);
  auto e_a = random_tensor({6, 3}, rng);
  auto embed = random_tensor({5, 3}, rng);
  const TokenId truth[] = {0, 1, 2, 3, 4, 0};
  const TokenId first[] = {0, 1, 4, 3, 2, 0};  // distance 2
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::vector<std::size_t> replaced;
    auto e_s = glm_sample(e_a, truth, first, embed, 1.1, seed, &replaced);
    ASSERT_EQ(replaced.size(), 3u);
    EXPECT_TRUE(std::is_sorted(replaced.begin(), replaced.end()));
    std::set<std::size_t> chosen(replaced.begin(), replaced.end());
    EXPECT_EQ(chosen.size(), 3u);
    for (std::size_t n = 0; n < 6; ++n) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double want = chosen.count(n) ? embed.at(truth[n], c) : e_a.at(n, c);
        EXPECT_EQ(e_s.at(n, c), want);
      }
    }
    std::vector<std::size_t> again;
    glm_sample(e_a, truth, first, embed, 1.1, seed, &again);
    EXPECT_EQ(again, replaced);
  }
  std::vector<std::size_t> none;
  auto same = glm_sample(e_a, truth, truth, embed, 1.1, 1, &none);
  EXPECT_TRUE(none.empty());
  EXPECT_EQ(same.id(), e_a.id());
  const TokenId short_truth[] = {0};
  EXPECT_THROW(glm_sample(e_a, short_truth, short_truth, embed, 1.1, 1), ContractError);
}

TEST(SaParaformer, TrainForwardContracts) {
  auto cfg = tiny_config();
  SaParaformer model(cfg, 3);
  std::mt19937_64 rng(8);
  auto x = random_tensor({12, 6}, rng, -1, 1, false);
  const TokenSequence y{1, 2, 3, 4, 5};
  auto inv = basis_inventory(2, 4, 2);
  TrainOptions opts;
  opts.fill_speakers = true;
  opts.k_max = 5;
  model.reset_invocations();
  auto tr = model.two_pass_train_forward(x, y, inv, opts);
  EXPECT_EQ(model.decoder_invocations(), 2u);
  EXPECT_EQ(tr.e_a.rows(), y.size());
  EXPECT_EQ(tr.second_pass_logits.shape(), (Shape{5, 9}));
  EXPECT_FALSE(tr.first_pass_logits.requires_grad());
  EXPECT_TRUE(tr.second_pass_logits.requires_grad());
  EXPECT_EQ(tr.cosine_scores.cols(), 5u);
  EXPECT_EQ(tr.cosine_scores.genuine_cols, 2u);
  EXPECT_EQ(tr.h_inter.shape(), tr.h_asr.shape());
  EXPECT_EQ(tr.first_pass_errors, edit_distance(y, tr.first_pass_tokens));
  EXPECT_EQ(tr.replaced_positions.size(),
            glm_replacement_count(5, tr.first_pass_errors, cfg.sampling_factor_lambda));
  EXPECT_THROW(model.two_pass_train_forward(x, {}, inv, opts), ContractError);
}

TEST(SaParaformer, InferenceIsOneParallelPass) {
  auto cfg = tiny_config();
  SaParaformer model(cfg, 5);
  std::mt19937_64 rng(9);
  auto inv = basis_inventory(4, 4, 2);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor({10 + 3 * static_cast<std::size_t>(trial), 6}, rng, -1, 1, false);
    model.reset_invocations();
    auto hyp = model.nar_infer(x, inv);
    EXPECT_LE(model.decoder_invocations(), 1u);
    EXPECT_EQ(hyp.speaker_ids.size(), hyp.size());
    EXPECT_EQ(hyp.scores.size(), hyp.size());
    for (const auto& id : hyp.speaker_ids) EXPECT_TRUE(id == "s0" || id == "s1");
  }
}

TEST(SaParaformer, SpeakerFusionChangesLogits) {
  auto cfg = tiny_config();
  SaParaformer model(cfg, 6);
  std::mt19937_64 rng(10);
  auto e = random_tensor({3, 8}, rng, -1, 1, false);
  auto h = random_tensor({7, 8}, rng, -1, 1, false);
  auto d1 = random_tensor({3, 4}, rng, -1, 1, false);
  auto d2 = random_tensor({3, 4}, rng, -1, 1, false);
  auto a = model.asr_decode(e, h, d1);
  auto b = model.asr_decode(e, h, d2);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff += std::fabs(a.data()[i] - b.data()[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST(SaParaformer, SameSeedSameParameters) {
  auto cfg = tiny_config();
  SaParaformer a(cfg, 11), b(cfg, 11);
  ASSERT_EQ(a.params().params().size(), b.params().params().size());
  for (std::size_t i = 0; i < a.params().params().size(); ++i)
    EXPECT_EQ(a.params().params()[i].second.to_vector(), b.params().params()[i].second.to_vector());
}

TEST(SaParaformer, CompositeObjectiveGradient) {
  auto cfg = tiny_config();
  cfg.sampling_factor_lambda = 1.1;
  SaParaformer model(cfg, 12);
  std::mt19937_64 rng(13);
  auto x = random_tensor({9, 6}, rng, -1, 1, false);
  const TokenSequence y{1, 4, 2, 6};
  const std::size_t spk[] = {0, 1, 1, 0};
  auto inv = basis_inventory(3, 4, 2);
  TrainOptions opts;
  opts.fill_speakers = true;
  opts.k_max = 4;
  opts.fill_seed = 3;
  opts.sampler_seed = 4;
  auto loss = [&] {
    auto tr = model.two_pass_train_forward(x, y, inv, opts);
    return sa_paraformer_objective(model, tr, y, spk, LossWeights{}).total;
  };
  auto report = grad_check(loss, model.params().params());
  EXPECT_TRUE(report.passed) << report.max_rel_error();
  EXPECT_LT(report.max_rel_error(), 1e-4);
}

TEST(ArBaseline, TeacherForcingAndGreedyLoop) {
  auto cfg = tiny_config();
  ArBaseline ar(cfg, 14);
  std::mt19937_64 rng(15);
  auto x = random_tensor({8, 6}, rng, -1, 1, false);
  auto inv = basis_inventory(3, 4, 2);
  const TokenSequence y{1, 2, 3};
  auto tf = ar.forward(x, y, inv);
  EXPECT_EQ(tf.logits.shape(), (Shape{4, 9}));
  EXPECT_EQ(tf.scores.rows(), 3u);
  const std::size_t spk[] = {0, 1, 0};
  EXPECT_TRUE(std::isfinite(ar_baseline_objective(ar, tf, y, spk).item()));

  ar.reset_invocations();
  auto hyp = ar.infer(x, inv, 6, true);
  EXPECT_EQ(hyp.size(), 6u);
  EXPECT_EQ(ar.decoder_invocations(), 6u);
  for (TokenId t : hyp.tokens) EXPECT_NE(t, cfg.eos_token());
  for (const auto& id : hyp.speaker_ids) EXPECT_TRUE(id == "s0" || id == "s1");

  ar.reset_invocations();
  auto stopped = ar.infer(x, inv, 6);
  EXPECT_LE(stopped.size(), 6u);
  EXPECT_GE(ar.decoder_invocations(), stopped.size());
}

TEST(ArBaseline, CausalPrefixIndependence) {
  // Teacher-forced logits at position n depend only on y_1..y_n.
  auto cfg = tiny_config();
  ArBaseline ar(cfg, 16);
  std::mt19937_64 rng(17);
  auto x = random_tensor({8, 6}, rng, -1, 1, false);
  auto inv = basis_inventory(2, 4, 2);
  auto a = ar.forward(x, TokenSequence{1, 2, 3}, inv);
  auto b = ar.forward(x, TokenSequence{1, 2, 5}, inv);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 9; ++c) EXPECT_DOUBLE_EQ(a.logits.at(r, c), b.logits.at(r, c));
}

}  // namespace
}  // namespace sapf
