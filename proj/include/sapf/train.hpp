#pragma once

// Training loop for the SA-Paraformer and the autoregressive baseline.
//
// Every random choice (epoch order, interfering speakers, filled scores,
// sampler positions) is derived from (seed, epoch, session), so a run is
// bit-reproducible and a resumed run replays exactly the epochs it missed.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sapf/config.hpp"
#include "sapf/losses.hpp"
#include "sapf/model.hpp"
#include "sapf/optim.hpp"
#include "sapf/synth.hpp"
#include "sapf/tsot.hpp"

namespace sapf {

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;
  AdamConfig adam;
  std::size_t epochs = 80;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  bool fill_speakers = true;
  std::size_t interfering = 2;     // extra pool speakers appended per sample
  std::size_t stage1_epochs = 0;   // speaker-agnostic epochs before the full objective
  double stage1_lambda = 0.0;      // sampling factor during stage 1
  std::size_t patience = 5;        // epochs without improvement before stopping a stage
  double min_improvement = 1e-4;   // relative drop in epoch loss that counts as progress
  double max_seconds = 0.0;        // wall-clock budget, 0 = none
  std::string checkpoint_path;     // written after every epoch when set
  std::string log_path;            // JSON lines, one per epoch, when set

  void validate() const;
  void read(const KeyValueConfig& kv);
  void write(KeyValueConfig& kv) const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based, counted across stages
  int stage = 2;
  double mae = 0.0;
  double ctc = 0.0;
  double inter_ctc = 0.0;
  double ce = 0.0;
  double speaker = 0.0;
  double total = 0.0;
  std::size_t infeasible_ctc = 0;
  std::size_t first_pass_errors = 0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_snapshot;
  std::string dataset_hash;
  std::vector<EpochLog> epochs;
  std::string stop_reason;
  bool diverged = false;
  std::size_t diverged_step = 0;
  std::size_t optimizer_steps = 0;
  std::string checkpoint_hash;  // of the final checkpoint file, when one is written
};

/// The serialized target of a session and the inventory column of each
/// target position's speaker.
struct TrainingTarget {
  SerializedTarget serialized;
  std::vector<std::size_t> speaker_indices;
};
TrainingTarget training_target(const Session& s, bool with_separator, TokenId cc_token);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains `model` in place. With `resume_from`, parameters, optimizer state
/// and the epoch counter are restored from that checkpoint first.
RunManifest train(const TrainConfig& cfg, const Dataset& data, SaParaformer& model,
                  const std::optional<std::string>& resume_from = std::nullopt,
                  const EpochCallback& on_epoch = {});

/// Teacher-forced training of the baseline on the same targets.
RunManifest train_ar(const TrainConfig& cfg, const Dataset& data, ArBaseline& model,
                     const EpochCallback& on_epoch = {});

/// One objective evaluation (no update) for session `index` of `data` as it
/// would be built in `epoch` of `stage`. `k_max` is the filled inventory width.
LossBreakdown session_objective(const SaParaformer& model, const Dataset& data, std::size_t index,
                                const TrainConfig& cfg, std::size_t epoch, int stage,
                                std::size_t k_max, ObjectiveStatus* status = nullptr,
                                std::size_t* first_pass_errors = nullptr);

}  // namespace sapf
