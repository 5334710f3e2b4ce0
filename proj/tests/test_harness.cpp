#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <unistd.h>

#include "sapf/checkpoint.hpp"
#include "sapf/config.hpp"
#include "sapf/dataset.hpp"
#include "sapf/error.hpp"
#include "sapf/evaluate.hpp"
#include "sapf/optim.hpp"
#include "sapf/synth.hpp"
#include "sapf/train.hpp"

namespace sapf {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("sapf_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthSpec tiny_spec() {
  SynthSpec s;
  s.num_sessions = 4;
  s.min_speakers = 1;
  s.max_speakers = 2;
  s.vocab_size = 12;
  s.min_tokens = 2;
  s.max_tokens = 3;
  s.min_frames_per_token = 2;
  s.max_frames_per_token = 3;
  s.overlap_tolerance = 0.5;
  s.feature_dim = 8;
  s.d_spk = 4;
  s.speaker_pool = 5;
  return s;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model.attn = {8, 2, 16};
  cfg.model.vocab_size = 12;
  cfg.model.feature_dim = 8;
  cfg.model.d_spk = 4;
  cfg.epochs = 4;
  cfg.batch_size = 2;
  cfg.patience = 100;
  cfg.adam.warmup_steps = 4;
  return cfg;
}

// ---------------------------------------------------------------------------
// Configuration files

TEST(KeyValueConfig, ParsesCommentsAndTypes) {
  auto kv = KeyValueConfig::parse("# comment\n\n a = 3 \nb=2.5\nc = true\nd = hello world\n");
  std::size_t a = 0;
  double b = 0;
  bool c = false;
  std::string d;
  kv.get("a", a);
  kv.get("b", b);
  kv.get("c", c);
  kv.get("d", d);
  EXPECT_EQ(a, 3u);
  EXPECT_DOUBLE_EQ(b, 2.5);
  EXPECT_TRUE(c);
  EXPECT_EQ(d, "hello world");
  EXPECT_NO_THROW(kv.reject_unused());
  std::size_t untouched = 9;
  kv.get("missing", untouched);
  EXPECT_EQ(untouched, 9u);
}

TEST(KeyValueConfig, Errors) {
  EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("just words\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse(" = 4\n"), ConfigError);
  auto kv = KeyValueConfig::parse("n = -3\nx = abc\nflag = maybe\nextra = 1\n");
  std::size_t n = 0;
  double x = 0;
  bool flag = false;
  EXPECT_THROW(kv.get("n", n), ConfigError);
  EXPECT_THROW(kv.get("x", x), ConfigError);
  EXPECT_THROW(kv.get("flag", flag), ConfigError);
  EXPECT_THROW(kv.reject_unused(), ConfigError);
  EXPECT_THROW(KeyValueConfig::load("/nonexistent/config.conf"), ConfigError);
}

TEST(TrainConfig, RoundTripsThroughText) {
  TrainConfig cfg = tiny_train_config();
  cfg.stage1_epochs = 7;
  cfg.model.use_cc_separator = true;
  cfg.loss.lambda1 = 0.2;
  KeyValueConfig kv;
  cfg.write(kv);
  TrainConfig back;
  back.read(KeyValueConfig::parse(kv.dump()));
  KeyValueConfig again;
  back.write(again);
  EXPECT_EQ(kv.dump(), again.dump());
  EXPECT_EQ(back.stage1_epochs, 7u);
  EXPECT_TRUE(back.model.use_cc_separator);
}

TEST(TrainConfig, Validation) {
  auto cfg = tiny_train_config();
  EXPECT_NO_THROW(cfg.validate());
  cfg.loss = {0.8, 0.4};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_train_config();
  cfg.model.attn.num_heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_train_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Synth, SessionsAreDeterministicAndWellFormed) {
  SynthSpec spec;
  SynthWorld world(spec);
  for (std::uint64_t i = 0; i < 16; ++i) {
    const Session s = world.session(i);
    const Session again = generate_session(spec, i);
    EXPECT_EQ(s.features.to_vector(), again.features.to_vector());
    EXPECT_EQ(s.features.cols(), spec.feature_dim);
    const std::size_t k = s.inventory.size();
    EXPECT_GE(k, spec.min_speakers);
    EXPECT_LE(k, spec.max_speakers);
    EXPECT_EQ(s.inventory.true_count, k);
    EXPECT_NO_THROW(s.inventory.validate());
    std::size_t last_end = 0;
    std::map<SpeakerId, std::vector<TimedToken>> per;
    for (const auto& t : s.tokens) {
      EXPECT_LT(t.start_frame, t.end_frame);
      EXPECT_LT(t.token, spec.num_word_tokens());
      last_end = std::max(last_end, t.end_frame);
      per[t.speaker].push_back(t);
    }
    EXPECT_EQ(last_end, s.frames());
    EXPECT_EQ(per.size(), k);
    for (const auto& [id, toks] : per) {
      EXPECT_GE(toks.size(), spec.min_tokens);
      EXPECT_LE(toks.size(), spec.max_tokens);
      for (std::size_t j = 1; j < toks.size(); ++j) {
        EXPECT_NE(toks[j].token, toks[j - 1].token);
        EXPECT_EQ(toks[j].start_frame, toks[j - 1].end_frame);
      }
    }
  }
}

TEST(Synth, OverlapNearTarget) {
  SynthSpec spec;
  SynthWorld world(spec);
  double sum = 0.0;
  for (std::uint64_t i = 0; i < 64; ++i) {
    const Session s = world.session(i);
    const double r = overlap_ratio(s.tokens);
    EXPECT_LE(std::fabs(r - spec.overlap_ratio_target), spec.overlap_tolerance);
    sum += r;
  }
  EXPECT_NEAR(sum / 64.0, spec.overlap_ratio_target, 0.05);
}

TEST(Synth, OverlapRatioDefinition) {
  std::vector<TimedToken> toks{{0, "A", 0, 4}, {1, "B", 2, 6}};
  EXPECT_DOUBLE_EQ(overlap_ratio(toks), 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(overlap_ratio({}), 0.0);
}

TEST(Synth, UnreachableOverlapIsAConfigError) {
  SynthSpec spec;
  spec.min_speakers = spec.max_speakers = 2;
  spec.overlap_ratio_target = 1.0;
  spec.overlap_tolerance = 0.01;
  spec.min_tokens = 2;
  spec.max_tokens = 6;
  EXPECT_THROW(generate_session(spec, 0), ConfigError);
  SynthSpec bad;
  bad.speaker_pool = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Synth, MonologueHasRequestedLength) {
  SynthWorld world(SynthSpec{});
  const Session s = world.monologue(3, 17);
  EXPECT_EQ(s.tokens.size(), 17u);
  EXPECT_EQ(s.inventory.size(), 1u);
}

TEST(Synth, SpeakerSignalSurvivesTheLift) {
  // P has orthonormal columns: P^T P = I.
  SynthWorld world(SynthSpec{});
  const Tensor& p = world.profile_lift();
  auto ptp = matmul(transpose(p), p);
  for (std::size_t i = 0; i < ptp.rows(); ++i)
    for (std::size_t j = 0; j < ptp.cols(); ++j) EXPECT_NEAR(ptp.at(i, j), i == j ? 1.0 : 0.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Dataset files

TEST(Dataset, WriteReadWriteIsByteIdentical) {
  const auto dir = scratch_dir("dataset");
  const Dataset ds = generate_dataset(tiny_spec(), 0, 4);
  write_dataset(ds, dir);
  const Dataset back = read_dataset(dir);
  const auto first = dataset_files(ds);
  const auto second = dataset_files(back);
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(first[i].first, second[i].first);
    EXPECT_EQ(first[i].second, second[i].second) << first[i].first;
  }
  EXPECT_EQ(dataset_hash(dir), dataset_hash(ds));
  EXPECT_EQ(dataset_hash(back), dataset_hash(ds));
  EXPECT_EQ(back.sessions[1].features.to_vector(), ds.sessions[1].features.to_vector());
  EXPECT_NE(dataset_hash(generate_dataset(tiny_spec(), 1, 4)), dataset_hash(ds));
  fs::remove_all(dir);
}

TEST(Dataset, CorruptionIsDetected) {
  const auto dir = scratch_dir("corrupt");
  write_dataset(generate_dataset(tiny_spec(), 0, 2), dir);
  write_file(dir / "manifest.txt", "NOT A DATASET\n");
  EXPECT_THROW(read_dataset(dir), FormatError);
  EXPECT_THROW(read_dataset(dir / "missing"), FormatError);
  fs::remove_all(dir);
}

TEST(Dataset, GitBlobHash) {
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Adam, ScheduleShape) {
  AdamConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.warmup_steps = 10;
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 5), 5e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 10), 1e-3);
  EXPECT_DOUBLE_EQ(scheduled_lr(cfg, 40), 5e-4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = Tensor::vector({1.0, -2.0}, true);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.warmup_steps = 1;
  cfg.clip_norm = 0.0;
  Adam opt({{"w", w}}, cfg);
  backward(sum(mul(w, Tensor::vector({3.0, -0.5}))));
  opt.step();
  // Bias-corrected first step is lr * sign(g).
  EXPECT_NEAR(w.at(0), 0.9, 1e-9);
  EXPECT_NEAR(w.at(1), -1.9, 1e-9);
}

TEST(Adam, ClipsGlobalNorm) {
  auto w = Tensor::vector({0.0, 0.0}, true);
  AdamConfig cfg;
  cfg.clip_norm = 1.0;
  Adam opt({{"w", w}}, cfg);
  backward(sum(mul(w, Tensor::vector({30.0, 40.0}))));
  const auto info = opt.step();
  EXPECT_TRUE(info.clipped);
  EXPECT_DOUBLE_EQ(info.grad_norm, 50.0);
  w.zero_grad();
  w.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opt.step(), NumericError);
}

TEST(Adam, MinimizesAQuadratic) {
  auto w = Tensor::vector({3.0, -4.0}, true);
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.warmup_steps = 1;
  Adam opt({{"w", w}}, cfg);
  for (int i = 0; i < 2000; ++i) {
    w.zero_grad();
    backward(sum(mul(w, w)));
    opt.step();
  }
  EXPECT_LT(std::fabs(w.at(0)) + std::fabs(w.at(1)), 0.05);
}

// ---------------------------------------------------------------------------
// Checkpoints and training

TEST(Checkpoint, RoundTripAndMismatch) {
  const auto dir = scratch_dir("ckpt");
  auto cfg = tiny_train_config().model;
  cfg.use_cc_separator = true;
  SaParaformer a(cfg, 1);
  KeyValueConfig meta;
  meta.set("note", "x");
  save_checkpoint(dir / "a.ckpt", ModelKind::kNar, cfg, a.params(), nullptr, meta);
  const auto h = read_checkpoint_header(dir / "a.ckpt");
  EXPECT_EQ(h.kind, ModelKind::kNar);
  EXPECT_TRUE(h.model.use_cc_separator);
  EXPECT_EQ(h.num_params, a.params().params().size());
  std::string note;
  h.meta.get("note", note);
  EXPECT_EQ(note, "x");
  auto b = load_sa_paraformer(dir / "a.ckpt");
  for (std::size_t i = 0; i < a.params().params().size(); ++i)
    EXPECT_EQ(a.params().params()[i].second.to_vector(), b->params().params()[i].second.to_vector());
  EXPECT_THROW(load_ar_baseline(dir / "a.ckpt"), FormatError);

  auto other = cfg;
  other.attn.ff_dim = 24;
  SaParaformer c(other, 1);
  EXPECT_THROW(load_checkpoint_values(dir / "a.ckpt", c.params()), FormatError);
  write_file(dir / "bad.ckpt", "garbage\n");
  EXPECT_THROW(read_checkpoint_header(dir / "bad.ckpt"), FormatError);
  const auto bytes = read_file(dir / "a.ckpt");
  write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
  SaParaformer d(cfg, 2);
  EXPECT_THROW(load_checkpoint_values(dir / "short.ckpt", d.params()), FormatError);
  fs::remove_all(dir);
}

TEST(Training, TrainingTargetsFollowSerialization) {
  const Dataset ds = generate_dataset(tiny_spec(), 0, 4);
  for (const auto& s : ds.sessions) {
    const auto t = training_target(s, true, 11);
    ASSERT_EQ(t.speaker_indices.size(), t.serialized.size());
    for (std::size_t i = 0; i < t.serialized.size(); ++i)
      EXPECT_EQ(s.inventory.profiles[t.speaker_indices[i]].id, t.serialized.speaker_labels[i]);
  }
}

TEST(Training, DeterministicAndResumable) {
  const auto dir = scratch_dir("resume");
  const Dataset ds = generate_dataset(tiny_spec(), 0, 4);
  auto cfg = tiny_train_config();
  cfg.stage1_epochs = 1;

  SaParaformer full(cfg.model, 3);
  const auto run_full = train(cfg, ds, full);
  SaParaformer repeat(cfg.model, 3);
  const auto run_repeat = train(cfg, ds, repeat);
  ASSERT_EQ(run_full.epochs.size(), 5u);
  for (std::size_t e = 0; e < 5; ++e) EXPECT_EQ(run_full.epochs[e].total, run_repeat.epochs[e].total);

  auto first = cfg;
  first.epochs = 2;
  first.checkpoint_path = (dir / "run.ckpt").string();
  SaParaformer part(cfg.model, 3);
  train(first, ds, part);
  auto rest = cfg;
  rest.checkpoint_path = first.checkpoint_path;
  SaParaformer resumed(cfg.model, 99);  // values come from the checkpoint
  const auto run_rest = train(rest, ds, resumed, first.checkpoint_path);
  ASSERT_EQ(run_rest.epochs.size(), 2u);
  EXPECT_EQ(run_rest.epochs[0].epoch, 4u);
  EXPECT_DOUBLE_EQ(run_rest.epochs[0].total, run_full.epochs[3].total);
  EXPECT_DOUBLE_EQ(run_rest.epochs[1].total, run_full.epochs[4].total);
  for (std::size_t i = 0; i < full.params().params().size(); ++i)
    EXPECT_EQ(full.params().params()[i].second.to_vector(),
              resumed.params().params()[i].second.to_vector());

  const Dataset other = generate_dataset(tiny_spec(), 10, 4);
  SaParaformer wrong(cfg.model, 3);
  EXPECT_THROW(train(rest, other, wrong, first.checkpoint_path), ConfigError);
  fs::remove_all(dir);
}

TEST(Training, ZeroLearningRateKeepsLossConstant) {
  const Dataset ds = generate_dataset(tiny_spec(), 0, 4);
  auto cfg = tiny_train_config();
  cfg.adam.learning_rate = 0.0;
  cfg.fill_speakers = false;
  cfg.interfering = 0;
  cfg.model.sampling_factor_lambda = 0.0;
  SaParaformer model(cfg.model, 4);
  const auto before = model.params().params()[0].second.to_vector();
  const auto run = train(cfg, ds, model);
  for (const auto& e : run.epochs) EXPECT_NEAR(e.total, run.epochs.front().total, 1e-9);
  EXPECT_EQ(model.params().params()[0].second.to_vector(), before);
}

TEST(Training, LossDecreases) {
  const Dataset ds = generate_dataset(tiny_spec(), 0, 4);
  auto cfg = tiny_train_config();
  cfg.epochs = 30;
  cfg.adam.learning_rate = 3e-3;
  SaParaformer model(cfg.model, 5);
  const auto run = train(cfg, ds, model);
  EXPECT_LT(run.epochs.back().total, 0.8 * run.epochs.front().total);
  EXPECT_FALSE(run.diverged);
}

TEST(Training, MismatchedDatasetRejected) {
  auto spec = tiny_spec();
  spec.vocab_size = 20;
  const Dataset ds = generate_dataset(spec, 0, 2);
  auto cfg = tiny_train_config();
  SaParaformer model(cfg.model, 1);
  EXPECT_THROW(train(cfg, ds, model), ConfigError);
  EXPECT_THROW(evaluate(model, ds, false), ConfigError);
}

TEST(Evaluation, ReportsAreConsistent) {
  const Dataset ds = generate_dataset(tiny_spec(), 0, 4);
  auto cfg = tiny_train_config().model;
  for (bool sep : {false, true}) {
    cfg.use_cc_separator = sep;
    SaParaformer model(cfg, 6);
    const auto r = evaluate(model, ds, sep);
    EXPECT_EQ(r.sessions.size(), 4u);
    std::size_t ref = 0;
    for (const auto& s : ds.sessions) ref += s.tokens.size();
    EXPECT_EQ(r.sd.total_ref_len, ref);
    EXPECT_EQ(r.cer.ref_len, ref);
    EXPECT_GT(r.sd.sd_cer, 50.0);  // untrained
    EXPECT_TRUE(std::isfinite(validation_ce(model, ds)));
  }
}

TEST(Evaluation, BenchRowsAndMismatch) {
  auto cfg = tiny_train_config().model;
  SaParaformer nar(cfg, 1);
  ArBaseline ar(cfg, 1);
  BenchOptions opts;
  opts.lengths = {2, 4};
  opts.utterances_per_length = 1;
  opts.spec = tiny_spec();
  const auto report = bench_rtf(nar, ar, opts);
  ASSERT_EQ(report.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(report.rows[1].ar_tokens, 4.0);
  EXPECT_GT(report.rows[1].ratio, 0.0);
  auto bigger = cfg;
  bigger.attn.ff_dim = 32;
  ArBaseline other(bigger, 1);
  EXPECT_THROW(bench_rtf(nar, other, opts), ConfigError);
}

}  // namespace
}  // namespace sapf
