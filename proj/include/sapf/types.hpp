#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace sapf {

using TokenId = std::size_t;
using SpeakerId = std::string;
using TokenSequence = std::vector<TokenId>;

/// Decoder output: one token, speaker and posterior per emitted position.
struct Hypothesis {
  TokenSequence tokens;
  std::vector<SpeakerId> speaker_ids;
  std::vector<double> scores;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
};

}  // namespace sapf

#include <map>

namespace sapf {

/// Token sequence per speaker, each in session order.
using SpeakerTranscripts = std::map<SpeakerId, TokenSequence>;

}  // namespace sapf
