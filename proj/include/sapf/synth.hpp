#pragma once

// Synthetic multi-speaker sessions. A world (fixed by the spec seed) owns a
// speaker pool with unit profiles and one embedding per word token; a session
// draws speakers from the pool, gives each an utterance of distinct-neighbour
// tokens, and shifts the utterances against each other until the overlapped
// fraction of speech frames is near the target. Every frame is
//
//   x_t = sum over tokens active at t of (e_token + P p_speaker) + noise,
//
// where P lifts speaker profiles into feature space through orthonormal
// columns, so speaker directions keep their geometry after the lift.

#include <cstdint>
#include <string>
#include <vector>

#include "sapf/config.hpp"
#include "sapf/speaker.hpp"
#include "sapf/tensor.hpp"
#include "sapf/tsot.hpp"

namespace sapf {

struct SynthSpec {
  std::size_t num_sessions = 16;
  std::size_t min_speakers = 2;
  std::size_t max_speakers = 3;
  std::size_t vocab_size = 40;  // including the two reserved ids
  std::size_t min_tokens = 4;   // per utterance
  std::size_t max_tokens = 6;
  std::size_t min_frames_per_token = 3;
  std::size_t max_frames_per_token = 5;
  double overlap_ratio_target = 0.42;
  double overlap_tolerance = 0.15;  // a session farther than this from the target is rejected
  std::size_t feature_dim = 32;
  std::size_t d_spk = 16;
  std::size_t speaker_pool = 10;
  double noise_std = 0.05;
  std::uint64_t seed = 1;

  /// Throws ConfigError on empty ranges or impossible sizes.
  void validate() const;
  void read(const KeyValueConfig& cfg, const std::string& prefix = "data.");
  void write(KeyValueConfig& cfg, const std::string& prefix = "data.") const;
  std::size_t num_word_tokens() const { return vocab_size - 2; }
};

struct Session {
  std::string name;
  Tensor features;  // T x F
  std::vector<TimedToken> tokens;  // end_frame is exclusive
  SpeakerInventory inventory;      // the session's own speakers only
  std::size_t frames() const { return features.rows(); }
};

/// Frames with two or more active speakers over frames with at least one.
double overlap_ratio(std::span<const TimedToken> tokens);

class SynthWorld {
 public:
  explicit SynthWorld(const SynthSpec& spec);

  const SynthSpec& spec() const { return spec_; }
  const std::vector<SpeakerProfile>& pool() const { return pool_; }
  const Tensor& token_embeddings() const { return token_embed_; }  // words x F
  const Tensor& profile_lift() const { return lift_; }              // F x d_spk

  /// Session number `index` of this world. Throws ConfigError when no
  /// offset trial lands within the overlap tolerance.
  Session session(std::uint64_t index) const;

  /// A single-speaker session with exactly `num_tokens` tokens (benchmarks).
  Session monologue(std::uint64_t index, std::size_t num_tokens) const;

  /// Frames for an explicit token schedule.
  Tensor render(std::span<const TimedToken> tokens, std::size_t frames,
                std::uint64_t noise_seed) const;

 private:
  SynthSpec spec_;
  std::vector<SpeakerProfile> pool_;
  Tensor token_embed_;
  Tensor lift_;
};

/// Session `index` of the world defined by `spec`.
Session generate_session(const SynthSpec& spec, std::uint64_t index);

struct Dataset {
  SynthSpec spec;
  std::uint64_t first_index = 0;
  std::vector<SpeakerProfile> pool;
  std::vector<Session> sessions;
};

/// Sessions first_index .. first_index + count - 1.
Dataset generate_dataset(const SynthSpec& spec, std::uint64_t first_index, std::size_t count);

}  // namespace sapf
