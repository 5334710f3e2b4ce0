#include "sapf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "sapf/checkpoint.hpp"
#include "sapf/dataset.hpp"
#include "sapf/error.hpp"
#include "sapf/report.hpp"

namespace sapf {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  // splitmix64 over the tuple.
  std::uint64_t x = seed;
  for (std::uint64_t v : {a, b, tag}) {
    x += 0x9e3779b97f4a7c15ULL + v;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x ^= x >> 31;
  }
  return x;
}

enum : std::uint64_t { kOrderTag = 1, kInterferingTag, kFillTag, kSamplerTag };

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix(seed, epoch, 0, kOrderTag));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

SpeakerInventory training_inventory(const Dataset& data, std::size_t index, const TrainConfig& cfg,
                                    std::size_t epoch) {
  return add_interfering(data.sessions[index].inventory, data.pool, cfg.interfering,
                         mix(cfg.seed, epoch, index, kInterferingTag));
}

struct Accumulator {
  EpochLog log;
  std::size_t count = 0;
  void add(const LossBreakdown& b) {
    log.mae += b.mae.item();
    log.ctc += b.ctc.item();
    log.inter_ctc += b.inter_ctc.item();
    log.ce += b.ce.item();
    log.speaker += b.speaker.item();
    log.total += b.total.item();
    ++count;
  }
  EpochLog finish() {
    if (count > 0) {
      const double n = static_cast<double>(count);
      for (double* v : {&log.mae, &log.ctc, &log.inter_ctc, &log.ce, &log.speaker, &log.total}) *v /= n;
    }
    return log;
  }
};

std::ofstream open_log(const std::string& path, bool append) {
  std::ofstream out;
  if (!path.empty()) {
    out.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw FormatError("cannot open log file " + path);
  }
  return out;
}

// Shared epoch/batch loop. `sample` builds the loss for one session and adds
// it to the accumulator; returning a non-finite total aborts the run.
template <typename Sample, typename Save>
void run_loop(const TrainConfig& cfg, const Dataset& data, ParamStore& params, Adam& opt,
              std::size_t start_epoch, double best, std::size_t stale, RunManifest& manifest,
              const EpochCallback& on_epoch, Sample&& sample, Save&& save) {
  const auto t0 = std::chrono::steady_clock::now();
  auto log_out = open_log(cfg.log_path, start_epoch > 1);
  const std::size_t stage1_end = cfg.stage1_epochs;

  int stage = stage1_end >= start_epoch ? 1 : 2;

  for (std::size_t epoch = start_epoch; epoch <= cfg.epochs + stage1_end; ++epoch) {
    if (stage == 1 && epoch > stage1_end) {
      stage = 2;
      best = std::numeric_limits<double>::infinity();
      stale = 0;
    }
    const auto e0 = std::chrono::steady_clock::now();
    Accumulator acc;
    acc.log.epoch = epoch;
    acc.log.stage = stage;
    const auto order = epoch_order(data.sessions.size(), cfg.seed, epoch);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      std::size_t k_max = 0;
      for (std::size_t i = b; i < end; ++i) {
        k_max = std::max(k_max, data.sessions[order[i]].inventory.size() + cfg.interfering);
      }
      params.zero_grad();
      for (std::size_t i = b; i < end; ++i) {
        const double total = sample(order[i], epoch, stage, k_max, 1.0 / double(end - b), acc);
        if (!std::isfinite(total)) {
          manifest.diverged = true;
          manifest.diverged_step = opt.steps() + 1;
          manifest.stop_reason = "diverged: non-finite loss at step " +
                                 std::to_string(manifest.diverged_step);
          return;
        }
      }
      const auto info = opt.step();
      acc.log.lr = info.lr;
    }
    EpochLog log = acc.finish();
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
    manifest.epochs.push_back(log);
    manifest.optimizer_steps = opt.steps();
    if (log_out) log_out << to_json(log).dump() << "\n" << std::flush;
    if (on_epoch) on_epoch(log);

    if (log.total < best * (1.0 - cfg.min_improvement)) {
      best = log.total;
      stale = 0;
    } else {
      ++stale;
    }
    save(epoch, stage, best, stale);

    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.max_seconds > 0.0 && elapsed >= cfg.max_seconds) {
      manifest.stop_reason = "time budget reached after epoch " + std::to_string(epoch);
      return;
    }
    if (stale >= cfg.patience) {
      if (stage == 1) {
        // Skip the rest of stage 1.
        epoch = stage1_end;
        continue;
      }
      manifest.stop_reason = "plateau at epoch " + std::to_string(epoch);
      return;
    }
  }
  manifest.stop_reason = "epoch limit";
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (epochs == 0 || batch_size == 0) throw ConfigError("train: epochs and batch_size must be positive");
  if (patience == 0) throw ConfigError("train: patience must be positive");
  if (!(adam.learning_rate >= 0.0)) throw ConfigError("train: learning rate must be >= 0");
  if (!(stage1_lambda >= 0.0)) throw ConfigError("train: stage1_lambda must be >= 0");
  if (!(max_seconds >= 0.0)) throw ConfigError("train: max_seconds must be >= 0");
}

void TrainConfig::read(const KeyValueConfig& kv) {
  read_model_config(kv, model);
  kv.get("loss.lambda1", loss.lambda1);
  kv.get("loss.lambda2", loss.lambda2);
  kv.get("train.learning_rate", adam.learning_rate);
  kv.get("train.warmup_steps", adam.warmup_steps);
  kv.get("train.clip_norm", adam.clip_norm);
  kv.get("train.epochs", epochs);
  kv.get("train.batch_size", batch_size);
  kv.get("train.seed", seed);
  kv.get("train.fill_speakers", fill_speakers);
  kv.get("train.interfering", interfering);
  kv.get("train.stage1_epochs", stage1_epochs);
  kv.get("train.stage1_lambda", stage1_lambda);
  kv.get("train.patience", patience);
  kv.get("train.min_improvement", min_improvement);
  kv.get("train.max_seconds", max_seconds);
  kv.get("train.checkpoint_path", checkpoint_path);
  kv.get("train.log_path", log_path);
}

void TrainConfig::write(KeyValueConfig& kv) const {
  write_model_config(model, kv);
  kv.set("loss.lambda1", real(loss.lambda1));
  kv.set("loss.lambda2", real(loss.lambda2));
  kv.set("train.learning_rate", real(adam.learning_rate));
  kv.set("train.warmup_steps", std::to_string(adam.warmup_steps));
  kv.set("train.clip_norm", real(adam.clip_norm));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.fill_speakers", fill_speakers ? "true" : "false");
  kv.set("train.interfering", std::to_string(interfering));
  kv.set("train.stage1_epochs", std::to_string(stage1_epochs));
  kv.set("train.stage1_lambda", real(stage1_lambda));
  kv.set("train.patience", std::to_string(patience));
  kv.set("train.min_improvement", real(min_improvement));
  kv.set("train.max_seconds", real(max_seconds));
}

TrainingTarget training_target(const Session& s, bool with_separator, TokenId cc_token) {
  TrainingTarget t;
  t.serialized = serialize(s.tokens, with_separator, cc_token);
  for (const auto& id : t.serialized.speaker_labels) {
    const std::size_t k = s.inventory.index_of(id);
    if (k >= s.inventory.true_count) {
      throw ContractError("session " + s.name + ": token speaker " + id + " not in its inventory");
    }
    t.speaker_indices.push_back(k);
  }
  return t;
}

LossBreakdown session_objective(const SaParaformer& model, const Dataset& data, std::size_t index,
                                const TrainConfig& cfg, std::size_t epoch, int stage,
                                std::size_t k_max, ObjectiveStatus* status,
                                std::size_t* first_pass_errors) {
  const Session& s = data.sessions.at(index);
  const auto& mc = model.config();
  const TrainingTarget target = training_target(s, mc.use_cc_separator, mc.cc_token());
  const SpeakerInventory inv = training_inventory(data, index, cfg, epoch);
  TrainOptions opts;
  opts.fill_speakers = cfg.fill_speakers;
  opts.k_max = k_max;
  opts.fill_seed = mix(cfg.seed, epoch, index, kFillTag);
  opts.sampler_seed = mix(cfg.seed, epoch, index, kSamplerTag);
  if (stage == 1) opts.sampling_factor = cfg.stage1_lambda;
  const ForwardTrace trace =
      model.two_pass_train_forward(s.features, target.serialized.tokens, inv, opts);
  if (first_pass_errors) *first_pass_errors = trace.first_pass_errors;
  return sa_paraformer_objective(model, trace, target.serialized.tokens, target.speaker_indices,
                                 cfg.loss, stage == 1 ? 0.0 : 1.0, status);
}

RunManifest train(const TrainConfig& cfg, const Dataset& data, SaParaformer& model,
                  const std::optional<std::string>& resume_from, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.sessions.empty()) throw ContractError("train: dataset is empty");
  if (data.spec.vocab_size != model.config().vocab_size ||
      data.spec.feature_dim != model.config().feature_dim || data.spec.d_spk != model.config().d_spk) {
    throw ConfigError("train: dataset vocab/feature/profile sizes do not match the model");
  }

  RunManifest manifest;
  {
    KeyValueConfig snap;
    cfg.write(snap);
    manifest.config_snapshot = snap.dump();
  }
  manifest.dataset_hash = dataset_hash(data);

  Adam opt(model.params().params(), cfg.adam);
  std::size_t start_epoch = 1, stale = 0;
  double best = std::numeric_limits<double>::infinity();
  if (resume_from) {
    load_checkpoint_values(*resume_from, model.params(), &opt);
    const auto h = read_checkpoint_header(*resume_from);
    std::size_t done = 0;
    h.meta.get("epoch", done);
    h.meta.get("best_loss", best);
    h.meta.get("stale_epochs", stale);
    std::string trained_on;
    h.meta.get("dataset", trained_on);
    if (!trained_on.empty() && trained_on != manifest.dataset_hash) {
      throw ConfigError("train: checkpoint " + *resume_from + " was trained on dataset " +
                        trained_on + ", not " + manifest.dataset_hash);
    }
    start_epoch = done + 1;
  }

  auto sample = [&](std::size_t index, std::size_t epoch, int stage, std::size_t k_max,
                    double weight, Accumulator& acc) {
    ObjectiveStatus status;
    std::size_t errs = 0;
    const LossBreakdown b =
        session_objective(model, data, index, cfg, epoch, stage, k_max, &status, &errs);
    acc.add(b);
    acc.log.infeasible_ctc += !status.ctc_feasible + !status.inter_ctc_feasible;
    acc.log.first_pass_errors += errs;
    const double total = b.total.item();
    if (std::isfinite(total)) backward(scale(b.total, weight));
    return total;
  };
  auto save = [&](std::size_t epoch, int stage, double best_loss, std::size_t stale_epochs) {
    if (cfg.checkpoint_path.empty()) return;
    KeyValueConfig meta;
    meta.set("epoch", std::to_string(epoch));
    meta.set("stage", std::to_string(stage));
    meta.set("best_loss", real(best_loss));
    meta.set("stale_epochs", std::to_string(stale_epochs));
    meta.set("dataset", manifest.dataset_hash);
    save_checkpoint(cfg.checkpoint_path, ModelKind::kNar, model.config(), model.params(), &opt, meta);
  };
  run_loop(cfg, data, model.params(), opt, start_epoch, best, stale, manifest, on_epoch, sample,
           save);
  if (!cfg.checkpoint_path.empty() && !manifest.epochs.empty()) {
    manifest.checkpoint_hash = git_blob_hash(read_file(cfg.checkpoint_path));
  }
  return manifest;
}

RunManifest train_ar(const TrainConfig& cfg, const Dataset& data, ArBaseline& model,
                     const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.sessions.empty()) throw ContractError("train_ar: dataset is empty");
  RunManifest manifest;
  {
    KeyValueConfig snap;
    cfg.write(snap);
    manifest.config_snapshot = snap.dump();
  }
  manifest.dataset_hash = dataset_hash(data);
  TrainConfig ar_cfg = cfg;
  ar_cfg.stage1_epochs = 0;
  Adam opt(model.params().params(), cfg.adam);
  const auto& mc = model.config();

  auto sample = [&](std::size_t index, std::size_t, int, std::size_t, double weight,
                    Accumulator& acc) {
    const Session& s = data.sessions[index];
    const TrainingTarget target = training_target(s, mc.use_cc_separator, mc.cc_token());
    const auto tf = model.forward(s.features, target.serialized.tokens, s.inventory);
    Tensor loss = ar_baseline_objective(model, tf, target.serialized.tokens, target.speaker_indices);
    LossBreakdown b;
    b.mae = b.ctc = b.inter_ctc = b.speaker = Tensor::scalar(0.0);
    b.ce = b.total = loss;
    acc.add(b);
    const double total = loss.item();
    if (std::isfinite(total)) backward(scale(loss, weight));
    return total;
  };
  auto save = [&](std::size_t epoch, int, double, std::size_t) {
    if (cfg.checkpoint_path.empty()) return;
    KeyValueConfig meta;
    meta.set("epoch", std::to_string(epoch));
    meta.set("dataset", manifest.dataset_hash);
    save_checkpoint(cfg.checkpoint_path, ModelKind::kAr, mc, model.params(), &opt, meta);
  };
  run_loop(ar_cfg, data, model.params(), opt, 1, std::numeric_limits<double>::infinity(), 0,
           manifest, on_epoch, sample, save);
  if (!cfg.checkpoint_path.empty() && !manifest.epochs.empty()) {
    manifest.checkpoint_hash = git_blob_hash(read_file(cfg.checkpoint_path));
  }
  return manifest;
}

}  // namespace sapf
