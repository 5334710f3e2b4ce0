// Command-line front end: gen-data, train, eval, bench, grad-check.
//
// Exit codes: 0 success, 1 runtime/contract failure (or a failing
// grad-check), 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "sapf/checkpoint.hpp"
#include "sapf/config.hpp"
#include "sapf/dataset.hpp"
#include "sapf/error.hpp"
#include "sapf/evaluate.hpp"
#include "sapf/gradient_suite.hpp"
#include "sapf/report.hpp"
#include "sapf/synth.hpp"
#include "sapf/train.hpp"

namespace fs = std::filesystem;
using namespace sapf;

namespace {

// Everything a config file may set. Unknown keys are rejected.
struct FileConfig {
  SynthSpec data;
  TrainConfig train;
  BenchOptions bench;
};

FileConfig load_config(const std::string& path) {
  FileConfig fc;
  if (path.empty()) return fc;
  const auto kv = KeyValueConfig::load(path);
  fc.data.read(kv);
  fc.train.read(kv);
  kv.get("bench.utterances_per_length", fc.bench.utterances_per_length);
  kv.get("bench.frame_shift_ms", fc.bench.frame_shift_ms);
  std::size_t bench_seed = fc.bench.seed;
  kv.get("bench.seed", bench_seed);
  fc.bench.seed = bench_seed;
  kv.reject_unused();
  return fc;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, j.dump(2) + "\n");
}

int cmd_gen_data(const std::string& config, std::optional<std::uint64_t> seed, const fs::path& out,
                 std::optional<std::size_t> heldout) {
  FileConfig fc = load_config(config);
  if (seed) fc.data.seed = *seed;
  fc.data.validate();
  const std::size_t n = fc.data.num_sessions;
  const std::size_t m = heldout.value_or(n);
  const Dataset train = generate_dataset(fc.data, 0, n);
  write_dataset(train, out / "train");
  std::printf("train    %zu sessions -> %s  (hash %s)\n", n, (out / "train").c_str(),
              dataset_hash(out / "train").c_str());
  if (m > 0) {
    // Held-out sessions come from the same world, past the training indices.
    const Dataset held = generate_dataset(fc.data, n, m);
    write_dataset(held, out / "heldout");
    std::printf("heldout  %zu sessions -> %s  (hash %s)\n", m, (out / "heldout").c_str(),
                dataset_hash(out / "heldout").c_str());
  }
  double overlap = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : train.sessions) {
    overlap += overlap_ratio(s.tokens);
    tokens += s.tokens.size();
  }
  std::printf("mean overlap %.3f, mean tokens/session %.1f\n", overlap / double(n),
              double(tokens) / double(n));
  return 0;
}

int cmd_train(const std::string& config, std::optional<std::uint64_t> seed, const fs::path& data_dir,
              const fs::path& out, const std::string& kind, bool resume, std::size_t log_every) {
  FileConfig fc = load_config(config);
  TrainConfig cfg = fc.train;
  if (seed) cfg.seed = *seed;
  fs::create_directories(out);
  cfg.checkpoint_path = (out / (kind + ".ckpt")).string();
  cfg.log_path = (out / (kind + ".log.jsonl")).string();
  const Dataset data = read_dataset(data_dir);

  auto progress = [&](const EpochLog& e) {
    if (log_every == 0 || e.epoch % log_every != 0) return;
    std::printf("epoch %4zu  stage %d  total %.4f  ce %.4f  ctc %.4f  spk %.4f  lr %.2e\n", e.epoch,
                e.stage, e.total, e.ce, e.ctc, e.speaker, e.lr);
    std::fflush(stdout);
  };

  RunManifest manifest;
  if (kind == "ar") {
    if (resume) throw ConfigError("--resume is only supported for the nar model");
    ArBaseline model(cfg.model, cfg.seed);
    manifest = train_ar(cfg, data, model, progress);
  } else {
    std::optional<std::string> from;
    if (resume) {
      if (!fs::exists(cfg.checkpoint_path)) {
        throw ConfigError("--resume: no checkpoint at " + cfg.checkpoint_path);
      }
      from = cfg.checkpoint_path;
    }
    SaParaformer model(cfg.model, cfg.seed);
    manifest = train(cfg, data, model, from, progress);
  }
  write_json(out / (kind + ".manifest.json"), to_json(manifest));
  const EpochLog* last = manifest.epochs.empty() ? nullptr : &manifest.epochs.back();
  std::printf("%s: %zu epochs, %s; final loss %.4f\ncheckpoint %s\n", kind.c_str(),
              manifest.epochs.size(), manifest.stop_reason.c_str(), last ? last->total : 0.0,
              cfg.checkpoint_path.c_str());
  return manifest.diverged ? 1 : 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const std::string& mode,
             const std::optional<fs::path>& out) {
  const auto model = load_sa_paraformer(checkpoint);
  const Dataset data = read_dataset(data_dir);
  bool sep = model->config().use_cc_separator;
  if (mode == "with") sep = true;
  if (mode == "without") sep = false;
  const EvalReport report = evaluate(*model, data, sep);
  const double ce = validation_ce(*model, data);
  std::cout << format_eval_summary(report);
  std::printf("valid CE    %.4f\n", ce);
  if (out) {
    nlohmann::json j = to_json(report);
    j["validation_ce"] = ce;
    j["checkpoint"] = checkpoint.string();
    j["dataset_hash"] = dataset_hash(data_dir);
    nlohmann::json sessions = nlohmann::json::array();
    for (const auto& s : report.sessions) sessions.push_back(to_json(s));
    j["sessions"] = sessions;
    write_json(*out, j);
  }
  return 0;
}

int cmd_bench(const std::string& config, std::optional<std::uint64_t> seed,
              const std::optional<fs::path>& nar_path, const std::optional<fs::path>& ar_path,
              const std::vector<std::size_t>& lengths, std::optional<std::size_t> utterances,
              const std::optional<fs::path>& out) {
  FileConfig fc = load_config(config);
  BenchOptions opts = fc.bench;
  opts.spec = fc.data;
  if (!lengths.empty()) opts.lengths = lengths;
  if (utterances) opts.utterances_per_length = *utterances;
  if (seed) opts.seed = *seed;

  // Without checkpoints the models are freshly initialized from the config:
  // latency depends on sizes, not on trained values.
  std::unique_ptr<SaParaformer> nar = nar_path ? load_sa_paraformer(*nar_path)
                                               : std::make_unique<SaParaformer>(fc.train.model, 1);
  std::unique_ptr<ArBaseline> ar = ar_path ? load_ar_baseline(*ar_path)
                                           : std::make_unique<ArBaseline>(fc.train.model, 1);
  opts.spec.vocab_size = nar->config().vocab_size;
  opts.spec.feature_dim = nar->config().feature_dim;
  opts.spec.d_spk = nar->config().d_spk;
  const BenchReport report = bench_rtf(*nar, *ar, opts);
  std::cout << format_bench_table(report);
  if (out) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) rows.push_back(to_json(r));
    write_json(*out, {{"rows", rows}});
  }
  return 0;
}

int cmd_grad_check(std::optional<std::uint64_t> seed, bool skip_model,
                   const std::optional<fs::path>& out) {
  GradientSuiteOptions opts;
  if (seed) opts.seed = *seed;
  opts.include_model = !skip_model;
  const GradientSuiteResult r = run_gradient_suite(opts);
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : r.cases) {
    std::printf("%-28s %-4s  max rel err %.3e  (tol %.0e)\n", c.name.c_str(),
                c.report.passed ? "ok" : "FAIL", c.report.max_rel_error(), c.report.tolerance);
    cases.push_back({{"name", c.name},
                     {"passed", c.report.passed},
                     {"max_rel_error", c.report.max_rel_error()},
                     {"tolerance", c.report.tolerance}});
  }
  std::printf("%s: %zu checks, max rel err %.3e\n", r.passed ? "PASS" : "FAIL", r.cases.size(),
              r.max_rel_error);
  if (out) write_json(*out, {{"passed", r.passed}, {"cases", cases}});
  return r.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker-attributed non-autoregressive ASR toolkit (toy scale)"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the seed from the config");
  };

  fs::path out;
  std::optional<fs::path> out_opt;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic train/heldout sessions");
  add_common(gen);
  gen->add_option("--out", out, "output directory (gets train/ and heldout/)")->required();
  std::optional<std::size_t> heldout;
  gen->add_option("--heldout", heldout, "held-out session count (default: same as training)");

  auto* tr = app.add_subcommand("train", "train the SA-Paraformer or the AR baseline");
  add_common(tr);
  fs::path data_dir;
  std::string kind = "nar";
  bool resume = false;
  std::size_t log_every = 10;
  tr->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--out", out, "run directory for checkpoint, log and manifest")->required();
  tr->add_option("--model", kind, "nar or ar")->check(CLI::IsMember({"nar", "ar"}));
  tr->add_flag("--resume", resume, "continue from <out>/nar.ckpt");
  tr->add_option("--log-every", log_every, "print every N epochs (0 = quiet)");

  auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  fs::path checkpoint;
  std::string mode = "auto";
  ev->add_option("--checkpoint", checkpoint, "SA-Paraformer checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--separator", mode, "auto (from checkpoint), with or without")
      ->check(CLI::IsMember({"auto", "with", "without"}));
  ev->add_option("--out", out_opt, "write a JSON report here");

  auto* be = app.add_subcommand("bench", "NAR vs AR decoding latency");
  add_common(be);
  std::optional<fs::path> nar_path, ar_path;
  std::vector<std::size_t> lengths;
  std::optional<std::size_t> utterances;
  be->add_option("--nar", nar_path, "SA-Paraformer checkpoint (default: fresh model)")->check(CLI::ExistingFile);
  be->add_option("--ar", ar_path, "AR baseline checkpoint (default: fresh model)")->check(CLI::ExistingFile);
  be->add_option("--lengths", lengths, "comma-separated output lengths")->delimiter(',');
  be->add_option("--utterances", utterances, "utterances per length");
  be->add_option("--out", out_opt, "write a JSON report here");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every gradient");
  gc->add_option("--seed", seed, "seed for the random inputs");
  bool skip_model = false;
  gc->add_flag("--ops-only", skip_model, "skip the full-model objectives");
  gc->add_option("--out", out_opt, "write a JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, seed, out, heldout);
    if (tr->parsed()) return cmd_train(config, seed, data_dir, out, kind, resume, log_every);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, mode, out_opt);
    if (be->parsed()) return cmd_bench(config, seed, nar_path, ar_path, lengths, utterances, out_opt);
    if (gc->parsed()) return cmd_grad_check(seed, skip_model, out_opt);
  } catch (const sapf::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
