#pragma once

// Token-level serialized output: tokens of all speakers merged into one
// stream by end time, optionally with a channel-change token between
// consecutive tokens of different speakers.

#include <cstddef>
#include <span>
#include <vector>

#include "sapf/error.hpp"
#include "sapf/types.hpp"

namespace sapf {

struct TimedToken {
  TokenId token = 0;
  SpeakerId speaker;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;
};

struct SerializedTarget {
  TokenSequence tokens;
  std::vector<SpeakerId> speaker_labels;  // a <cc> slot carries the next token's speaker
  bool has_separator = false;
  TokenId cc_token = 0;

  std::size_t size() const { return tokens.size(); }
  std::size_t separator_count() const;
};

class MalformedStreamError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Stable sort by (end_frame, start_frame, speaker), then a <cc> at every
/// speaker change when `with_separator`.
SerializedTarget serialize(std::span<const TimedToken> tokens, bool with_separator, TokenId cc_token);

/// Splits a decoded stream back into per-speaker sequences. With separators,
/// each <cc>-delimited segment goes to its majority predicted speaker (first
/// seen wins ties); without, every token goes to its own predicted speaker.
SpeakerTranscripts deserialize(const Hypothesis& hyp, bool with_separator, TokenId cc_token);

SerializedTarget strip_separators(const SerializedTarget& target);

/// Number of adjacent label pairs that differ.
std::size_t speaker_changes(std::span<const SpeakerId> labels);

/// Each speaker's tokens ordered by start frame.
SpeakerTranscripts reference_transcripts(std::span<const TimedToken> tokens);

}  // namespace sapf
