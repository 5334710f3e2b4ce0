#include <gtest/gtest.h>

#include <functional>
#include <map>
#include <random>

#include "sapf/error.hpp"
#include "sapf/evaluate.hpp"
#include "sapf/metrics.hpp"

namespace sapf {
namespace {

// Plain recursive Levenshtein with memoization, written from the definition.
std::size_t recursive_distance(const TokenSequence& a, const TokenSequence& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    return memo[key] = best;
  };
  return go(0, 0);
}

TokenSequence random_seq(std::mt19937_64& rng, std::size_t max_len, std::size_t vocab) {
  std::uniform_int_distribution<std::size_t> len(0, max_len), tok(0, vocab - 1);
  TokenSequence s(len(rng));
  for (auto& t : s) t = tok(rng);
  return s;
}

TEST(EditAlign, HandCases) {
  const TokenSequence abc{0, 1, 2};
  auto same = edit_align(abc, abc);
  EXPECT_EQ(same.errors(), 0u);
  EXPECT_EQ(same.correct, 3u);

  auto sub = edit_align(abc, TokenSequence{0, 9, 2});
  EXPECT_EQ(sub.sub, 1u);
  EXPECT_EQ(sub.errors(), 1u);
  EXPECT_NEAR(sub.rate(), 100.0 / 3.0, 1e-12);

  auto del = edit_align(abc, TokenSequence{0, 1});
  EXPECT_EQ(del.del, 1u);
  EXPECT_EQ(del.errors(), 1u);

  auto ins = edit_align(abc, TokenSequence{0, 1, 2, 3});
  EXPECT_EQ(ins.ins, 1u);

  auto empty = edit_align(TokenSequence{}, TokenSequence{});
  EXPECT_EQ(empty.rate(), 0.0);
  EXPECT_EQ(edit_align(TokenSequence{}, TokenSequence{4}).rate(), 100.0);
}

TEST(EditAlign, PrefersSubstitutionOverInsertDeletePair) {
  // ref "ab" vs hyp "ba": distance 2, reachable as 2 subs or del+ins.
  auto c = edit_align(TokenSequence{0, 1}, TokenSequence{1, 0});
  EXPECT_EQ(c.sub, 2u);
  EXPECT_EQ(c.ins + c.del, 0u);
}

TEST(EditAlign, MatchesRecursiveOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto ref = random_seq(rng, 8, 4);
    const auto hyp = random_seq(rng, 8, 4);
    const auto c = edit_align(ref, hyp);
    const std::size_t want = recursive_distance(ref, hyp);
    ASSERT_EQ(c.errors(), want);
    EXPECT_EQ(edit_distance(ref, hyp), want);
    EXPECT_EQ(c.del + c.sub + c.correct, ref.size());
    EXPECT_EQ(c.ins + c.sub + c.correct, hyp.size());
  }
}

TEST(SdCer, WrongSpeakerEverywhereIsOneHundredPercent) {
  SpeakerTranscripts refs{{"A", {1, 2, 3}}, {"B", {4, 5, 6}}};
  SpeakerTranscripts swapped{{"A", {4, 5, 6}}, {"B", {1, 2, 3}}};
  auto r = sd_cer(refs, swapped);
  EXPECT_DOUBLE_EQ(r.sd_cer, 100.0);
  EXPECT_EQ(r.total_ref_len, 6u);
  EXPECT_EQ(r.total_errors, 6u);
}

TEST(SdCer, MissingAndUnknownSpeakers) {
  SpeakerTranscripts refs{{"A", {1, 2}}, {"B", {3}}};
  SpeakerTranscripts hyps{{"A", {1, 2}}, {"C", {7, 8}}};
  auto r = sd_cer(refs, hyps);
  EXPECT_EQ(r.per_speaker.at("B").del, 1u);
  EXPECT_EQ(r.per_speaker.at("C").ins, 2u);
  EXPECT_EQ(r.per_speaker.at("C").ref_len, 0u);
  EXPECT_DOUBLE_EQ(r.sd_cer, 100.0 * 3.0 / 3.0);
}

TEST(SdCer, SingleSpeakerIsPlainCer) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto ref = random_seq(rng, 10, 5);
    if (ref.empty()) ref.push_back(0);
    const auto hyp = random_seq(rng, 10, 5);
    auto r = sd_cer({{"A", ref}}, {{"A", hyp}});
    EXPECT_DOUBLE_EQ(r.sd_cer, edit_align(ref, hyp).rate());
  }
}

TEST(SdCer, AggregateInvariantAndMerge) {
  SDCERReport a = sd_cer({{"A", {1, 2, 3}}}, {{"A", {1, 3}}});
  SDCERReport b = sd_cer({{"A", {4, 5}}}, {{"A", {4, 5, 6}}});
  SDCERReport merged;
  merged.merge(a);
  merged.merge(b);
  EXPECT_EQ(merged.per_speaker.size(), 1u);
  EXPECT_EQ(merged.total_ref_len, 5u);
  EXPECT_EQ(merged.total_errors, 2u);
  EXPECT_DOUBLE_EQ(merged.sd_cer, 40.0);
  SDCERReport prefixed;
  prefixed.merge(a, "s1/");
  prefixed.merge(b, "s2/");
  EXPECT_EQ(prefixed.per_speaker.size(), 2u);
}

TEST(Rtf, FrameShiftArithmetic) {
  EXPECT_DOUBLE_EQ(audio_seconds(1000, 8.0), 8.0);
  EXPECT_DOUBLE_EQ(BenchOptions{}.frame_shift_ms, 8.0);
}

TEST(Rtf, FakeClockAndWarmup) {
  double now = 0.0;
  std::size_t calls = 0;
  const std::vector<std::size_t> frames{2500, 2500, 1250};  // 50 s at 8 ms
  auto report = rtf_measure(
      [&](std::size_t i) {
        ++calls;
        now += 1.0;  // every decode takes 1 s, warm-up included
        return i + 1;
      },
      frames, 8.0, [&] { return now; });
  EXPECT_EQ(calls, 4u);
  EXPECT_DOUBLE_EQ(report.total_audio_seconds, 50.0);
  EXPECT_DOUBLE_EQ(report.total_inference_seconds, 3.0);
  EXPECT_DOUBLE_EQ(report.rtf, 0.06);
  ASSERT_EQ(report.per_length_breakdown.size(), 3u);
  EXPECT_EQ(report.per_length_breakdown[2].first, 3u);
}

TEST(Rtf, RatioExample) {
  double now = 0.0;
  const std::vector<std::size_t> frames{6250};  // 50 s
  auto report = rtf_measure([&](std::size_t) { now += 5.0; return std::size_t{1}; }, frames, 8.0,
                            [&] { return now; });
  EXPECT_DOUBLE_EQ(report.rtf, 0.1);
  const std::vector<std::size_t> none{0};
  EXPECT_THROW(rtf_measure([](std::size_t) { return std::size_t{0}; }, none, 8.0), ContractError);
}

}  // namespace
}  // namespace sapf
