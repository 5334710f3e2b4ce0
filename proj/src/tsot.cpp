#include "sapf/tsot.hpp"

#include <algorithm>
#include <numeric>

namespace sapf {

std::size_t SerializedTarget::separator_count() const {
  if (!has_separator) return 0;
  return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), cc_token));
}

namespace {

std::vector<std::size_t> chronological_order(std::span<const TimedToken> tokens) {
  for (const auto& t : tokens) {
    if (t.start_frame > t.end_frame) {
      throw ContractError("timed token starts after it ends (" + std::to_string(t.start_frame) +
                          " > " + std::to_string(t.end_frame) + ")");
    }
  }
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = tokens[a];
    const auto& y = tokens[b];
    if (x.end_frame != y.end_frame) return x.end_frame < y.end_frame;
    if (x.start_frame != y.start_frame) return x.start_frame < y.start_frame;
    return x.speaker < y.speaker;
  });
  return order;
}

}  // namespace

SerializedTarget serialize(std::span<const TimedToken> tokens, bool with_separator,
                           TokenId cc_token) {
  SerializedTarget out;
  out.has_separator = with_separator;
  out.cc_token = cc_token;
  for (std::size_t idx : chronological_order(tokens)) {
    const auto& t = tokens[idx];
    if (t.token == cc_token) throw ContractError("timed token uses the reserved <cc> id");
    if (with_separator && !out.speaker_labels.empty() && out.speaker_labels.back() != t.speaker) {
      out.tokens.push_back(cc_token);
      out.speaker_labels.push_back(t.speaker);
    }
    out.tokens.push_back(t.token);
    out.speaker_labels.push_back(t.speaker);
  }
  return out;
}

SpeakerTranscripts deserialize(const Hypothesis& hyp, bool with_separator, TokenId cc_token) {
  if (hyp.tokens.size() != hyp.speaker_ids.size()) {
    throw ContractError("deserialize: token and speaker sequences differ in length");
  }
  SpeakerTranscripts out;
  if (!with_separator) {
    for (std::size_t i = 0; i < hyp.tokens.size(); ++i) {
      if (hyp.tokens[i] == cc_token) {
        throw MalformedStreamError("deserialize: <cc> at position " + std::to_string(i) +
                                   " in a stream decoded without separators");
      }
      out[hyp.speaker_ids[i]].push_back(hyp.tokens[i]);
    }
    return out;
  }

  std::size_t begin = 0;
  auto flush = [&](std::size_t end) {
    // Majority speaker of [begin, end); first seen wins ties.
    std::vector<std::pair<SpeakerId, std::size_t>> votes;
    for (std::size_t i = begin; i < end; ++i) {
      auto it = std::find_if(votes.begin(), votes.end(),
                             [&](const auto& v) { return v.first == hyp.speaker_ids[i]; });
      if (it == votes.end()) {
        votes.emplace_back(hyp.speaker_ids[i], 1);
      } else {
        ++it->second;
      }
    }
    if (votes.empty()) return;
    const auto* best = &votes.front();
    for (const auto& v : votes) {
      if (v.second > best->second) best = &v;
    }
    auto& seq = out[best->first];
    seq.insert(seq.end(), hyp.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
               hyp.tokens.begin() + static_cast<std::ptrdiff_t>(end));
  };
  for (std::size_t i = 0; i < hyp.tokens.size(); ++i) {
    if (hyp.tokens[i] == cc_token) {
      flush(i);
      begin = i + 1;
    }
  }
  flush(hyp.tokens.size());
  return out;
}

SerializedTarget strip_separators(const SerializedTarget& target) {
  SerializedTarget out;
  out.cc_token = target.cc_token;
  out.has_separator = false;
  for (std::size_t i = 0; i < target.tokens.size(); ++i) {
    if (target.has_separator && target.tokens[i] == target.cc_token) continue;
    out.tokens.push_back(target.tokens[i]);
    out.speaker_labels.push_back(target.speaker_labels[i]);
  }
  return out;
}

std::size_t speaker_changes(std::span<const SpeakerId> labels) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < labels.size(); ++i) n += labels[i] != labels[i - 1];
  return n;
}

SpeakerTranscripts reference_transcripts(std::span<const TimedToken> tokens) {
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return tokens[a].start_frame < tokens[b].start_frame;
  });
  SpeakerTranscripts out;
  for (std::size_t i : order) out[tokens[i].speaker].push_back(tokens[i].token);
  return out;
}

}  // namespace sapf
