#pragma once

// Evaluation driver (SD-CER and speaker-agnostic CER over a dataset) and the
// NAR-vs-AR latency benchmark.

#include <string>
#include <vector>

#include "sapf/metrics.hpp"
#include "sapf/model.hpp"
#include "sapf/synth.hpp"

namespace sapf {

struct SessionResult {
  std::string name;
  Hypothesis hypothesis;
  SDCERReport sd;
  EditCounts cer;  // merged stream without separators
};

struct EvalReport {
  bool with_separator = false;
  SDCERReport sd;
  EditCounts cer;
  std::vector<SessionResult> sessions;
};

/// Single-pass inference on every session, deserialized per separator mode,
/// scored per speaker. Throws ConfigError when the dataset and model
/// disagree on vocabulary, feature or profile size.
EvalReport evaluate(const SaParaformer& model, const Dataset& data, bool with_separator);

/// Mean token cross-entropy of the decoder on CIF embeddings with the
/// target length forced, no sampler and no inventory augmentation.
double validation_ce(const SaParaformer& model, const Dataset& data);

struct BenchOptions {
  std::vector<std::size_t> lengths{8, 16, 32, 64};
  std::size_t utterances_per_length = 3;
  double frame_shift_ms = 8.0;
  std::uint64_t seed = 7;
  SynthSpec spec;  // drives the monologue inputs
};

struct BenchRow {
  std::size_t length = 0;
  RTFReport nar;
  RTFReport ar;
  double ratio = 0.0;  // AR seconds / NAR seconds
  double nar_tokens = 0.0;  // mean emitted tokens per utterance
  double ar_tokens = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

/// Times NAR and greedy AR decoding on single-speaker inputs with roughly
/// `length` tokens each. The AR decoder is forced to emit exactly `length`
/// tokens. Throws ConfigError when the two models differ in size.
BenchReport bench_rtf(const SaParaformer& nar, const ArBaseline& ar, const BenchOptions& opts);

}  // namespace sapf
