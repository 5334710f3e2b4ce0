#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sapf/error.hpp"
#include "sapf/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace sapf {
namespace {

using testing::gradient_error;
using testing::random_tensor;

using oracle::ctc_probability;

TEST(CeLoss, HandValue) {
  auto logits = Tensor::matrix({{0.0, std::log(3.0)}, {std::log(4.0), 0.0}});
  const TokenId tgt[] = {1, 1};
  // p = 3/4 and 1/5
  EXPECT_NEAR(ce_loss(logits, tgt).item(), -(std::log(0.75) + std::log(0.2)) / 2.0, 1e-14);
  EXPECT_EQ(ce_loss(Tensor::zeros({0, 4}), {}).item(), 0.0);
  const TokenId one[] = {0};
  EXPECT_THROW(ce_loss(logits, one), DimensionError);
}

TEST(CtcLoss, SingleAlignmentCase) {
  // Target [a, a] over 3 frames has exactly one path: a, blank, a.
  std::mt19937_64 rng(1);
  auto logits = random_tensor({3, 3}, rng, -2, 2, false);
  const TokenId tgt[] = {0, 0};
  auto lsm = log_softmax(logits, 1);
  const double want = -(lsm.at(0, 0) + lsm.at(1, 2) + lsm.at(2, 0));
  auto r = ctc_loss(logits, tgt);
  EXPECT_TRUE(r.feasible);
  EXPECT_NEAR(r.loss.item(), want, 1e-12);
}

TEST(CtcLoss, InfeasibleIsReported) {
  auto logits = Tensor::zeros({2, 3});
  const TokenId tgt[] = {0, 0};  // needs three frames
  auto r = ctc_loss(logits, tgt);
  EXPECT_FALSE(r.feasible);
  EXPECT_TRUE(std::isinf(r.loss.item()));
  const TokenId blank[] = {2};
  EXPECT_THROW(ctc_loss(logits, blank), ContractError);
}

TEST(CtcLoss, EmptyTargetIsAllBlank) {
  std::mt19937_64 rng(2);
  auto logits = random_tensor({4, 3}, rng, -1, 1, false);
  auto lsm = log_softmax(logits, 1);
  double want = 0.0;
  for (std::size_t t = 0; t < 4; ++t) want -= lsm.at(t, 2);
  EXPECT_NEAR(ctc_loss(logits, {}).loss.item(), want, 1e-12);
}

TEST(CtcLoss, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> frames(1, 6), len(0, 3), classes(2, 5);
  int infeasible = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t T = frames(rng), C = classes(rng), L = len(rng);
    auto logits = random_tensor({T, C}, rng, -3, 3, false);
    std::uniform_int_distribution<TokenId> tok(0, C - 2);
    TokenSequence target(L);
    for (auto& t : target) t = tok(rng);
    const double p = ctc_probability(logits, target);
    auto r = ctc_loss(logits, target);
    if (p == 0.0) {
      ++infeasible;
      EXPECT_FALSE(r.feasible);
      EXPECT_TRUE(std::isinf(r.loss.item()));
    } else {
      ASSERT_TRUE(r.feasible);
      EXPECT_NEAR(r.loss.item(), -std::log(p), 1e-8) << "trial " << trial;
    }
  }
  EXPECT_GT(infeasible, 0);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto logits = random_tensor({6, 4}, rng, -2, 2);
    const TokenSequence tgt{static_cast<TokenId>(trial % 3), 1, static_cast<TokenId>((trial + 1) % 3)};
    auto fn = [&](const std::vector<Tensor>& v) { return ctc_loss(v[0], tgt).loss; };
    EXPECT_LT(gradient_error(fn, {logits}), 1e-6);
  }
}

TEST(CtcLoss, InterCtcAgreesWithMainHead) {
  ParamStore store(3);
  Linear head(store, "head", 8, 5);
  std::mt19937_64 rng(6);
  auto h = random_tensor({7, 8}, rng);
  const TokenId tgt[] = {3, 1};
  EXPECT_DOUBLE_EQ(inter_ctc_loss(h, head, tgt).loss.item(), ctc_loss(head(h), tgt).loss.item());
  std::vector<Tensor> params{h, head.weight, head.bias};
  auto fn = [&](const std::vector<Tensor>&) { return inter_ctc_loss(h, head, tgt).loss; };
  EXPECT_LT(gradient_error(fn, params), 1e-6);
}

TEST(SpeakerLoss, ValueAndContracts) {
  CosineScores s;
  s.b = Tensor::matrix({{0.5, -0.2, 0.1}, {0.0, 0.9, 0.3}});
  s.genuine_cols = 2;
  s.fill_mask = {0, 0, 1, 0, 0, 1};
  const std::size_t idx[] = {0, 1};
  auto lsm = log_softmax(s.b, 1);
  EXPECT_NEAR(speaker_loss(s, idx).item(), -(lsm.at(0, 0) + lsm.at(1, 1)), 1e-14);
  const std::size_t filled[] = {2, 1};
  EXPECT_THROW(speaker_loss(s, filled), ContractError);
  const std::size_t short_idx[] = {0};
  EXPECT_THROW(speaker_loss(s, short_idx), DimensionError);
  auto b = Tensor::matrix({{0.5, -0.2, 0.1}}, true);
  CosineScores g{b, {0, 0, 1}, 2};
  const std::size_t one[] = {1};
  auto fn = [&](const std::vector<Tensor>&) { return speaker_loss(g, one); };
  EXPECT_LT(gradient_error(fn, {b}), 1e-7);
}

TEST(CompositeLoss, WeightsAndValidation) {
  auto l = composite_loss(Tensor::scalar(1.0), Tensor::scalar(2.0), Tensor::scalar(3.0),
                          Tensor::scalar(4.0), Tensor::scalar(5.0), LossWeights{0.3, 0.3});
  EXPECT_NEAR(l.total.item(), 1.0 + 0.6 + 0.9 + 1.6 + 5.0, 1e-12);
  EXPECT_THROW((LossWeights{0.7, 0.4}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{-0.1, 0.4}.validate()), ConfigError);
  EXPECT_NO_THROW((LossWeights{0.5, 0.5}.validate()));
}

}  // namespace
}  // namespace sapf
