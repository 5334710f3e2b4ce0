#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "sapf/types.hpp"

namespace sapf {

struct EditCounts {
  std::size_t ins = 0;
  std::size_t del = 0;
  std::size_t sub = 0;
  std::size_t correct = 0;
  std::size_t ref_len = 0;

  std::size_t errors() const { return ins + del + sub; }
  /// Error rate in percent; 0 for an empty reference with no insertions.
  double rate() const;
  EditCounts& operator+=(const EditCounts& o);
};

/// Minimal-edit alignment. Among optimal alignments the backtrace prefers
/// substitution/match, then deletion, then insertion.
EditCounts edit_align(std::span<const TokenId> ref, std::span<const TokenId> hyp);

/// Plain Levenshtein distance (ins + del + sub).
std::size_t edit_distance(std::span<const TokenId> ref, std::span<const TokenId> hyp);

struct SDCERReport {
  std::map<SpeakerId, EditCounts> per_speaker;
  std::size_t total_errors = 0;
  std::size_t total_ref_len = 0;
  double sd_cer = 0.0;  // percent

  EditCounts totals() const;
  /// Adds another report's per-speaker counts under `prefix` + speaker id.
  void merge(const SDCERReport& other, const std::string& prefix = "");
  void recompute();
};

/// Scores each speaker's hypothesis against that speaker's reference. A
/// hypothesis speaker missing from the references counts as pure insertions;
/// a reference speaker with no hypothesis as pure deletions.
SDCERReport sd_cer(const SpeakerTranscripts& refs, const SpeakerTranscripts& hyps);

struct RTFReport {
  double total_inference_seconds = 0.0;
  double total_audio_seconds = 0.0;
  double rtf = 0.0;
  std::vector<std::pair<std::size_t, double>> per_length_breakdown;  // (output length, seconds)
};

/// Audio duration of `frames` frames at the given shift.
double audio_seconds(std::size_t frames, double frame_shift_ms);

using Clock = std::function<double()>;  // monotonic seconds

/// Times `decode(i)` (which returns the output length) for every utterance
/// after one untimed warm-up call on the first utterance. Throws
/// ContractError when the total audio duration is zero.
RTFReport rtf_measure(const std::function<std::size_t(std::size_t)>& decode,
                      std::span<const std::size_t> frames_per_utterance, double frame_shift_ms,
                      const Clock& clock = {});

}  // namespace sapf
