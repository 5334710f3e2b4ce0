#include "sapf/metrics.hpp"

#include <algorithm>
#include <chrono>

#include "sapf/error.hpp"

namespace sapf {

double EditCounts::rate() const {
  if (ref_len == 0) return errors() == 0 ? 0.0 : 100.0;
  return 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_len);
}

EditCounts& EditCounts::operator+=(const EditCounts& o) {
  ins += o.ins;
  del += o.del;
  sub += o.sub;
  correct += o.correct;
  ref_len += o.ref_len;
  return *this;
}

namespace {

std::vector<std::size_t> edit_table(std::span<const TokenId> ref, std::span<const TokenId> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) d[at(i, 0)] = i;
  for (std::size_t j = 0; j <= m; ++j) d[at(0, j)] = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[at(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d[at(i, j)] = std::min({diag, d[at(i - 1, j)] + 1, d[at(i, j - 1)] + 1});
    }
  return d;
}

}  // namespace

std::size_t edit_distance(std::span<const TokenId> ref, std::span<const TokenId> hyp) {
  return edit_table(ref, hyp).back();
}

EditCounts edit_align(std::span<const TokenId> ref, std::span<const TokenId> hyp) {
  const std::size_t m = hyp.size();
  const auto d = edit_table(ref, hyp);
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  EditCounts c;
  c.ref_len = ref.size();
  std::size_t i = ref.size(), j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (d[at(i, j)] == d[at(i - 1, j - 1)] + (same ? 0 : 1)) {
        same ? ++c.correct : ++c.sub;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && d[at(i, j)] == d[at(i - 1, j)] + 1) {
      ++c.del;
      --i;
    } else {
      ++c.ins;
      --j;
    }
  }
  return c;
}

EditCounts SDCERReport::totals() const {
  EditCounts t;
  for (const auto& [id, c] : per_speaker) t += c;
  return t;
}

void SDCERReport::recompute() {
  const EditCounts t = totals();
  total_errors = t.errors();
  total_ref_len = t.ref_len;
  sd_cer = t.rate();
}

void SDCERReport::merge(const SDCERReport& other, const std::string& prefix) {
  for (const auto& [id, c] : other.per_speaker) per_speaker[prefix + id] += c;
  recompute();
}

SDCERReport sd_cer(const SpeakerTranscripts& refs, const SpeakerTranscripts& hyps) {
  SDCERReport report;
  static const TokenSequence kEmpty;
  for (const auto& [id, ref] : refs) {
    auto it = hyps.find(id);
    report.per_speaker[id] = edit_align(ref, it == hyps.end() ? kEmpty : it->second);
  }
  for (const auto& [id, hyp] : hyps) {
    if (!refs.count(id)) report.per_speaker[id] = edit_align(kEmpty, hyp);
  }
  report.recompute();
  return report;
}

double audio_seconds(std::size_t frames, double frame_shift_ms) {
  return static_cast<double>(frames) * frame_shift_ms / 1000.0;
}

RTFReport rtf_measure(const std::function<std::size_t(std::size_t)>& decode,
                      std::span<const std::size_t> frames_per_utterance, double frame_shift_ms,
                      const Clock& clock) {
  RTFReport report;
  for (std::size_t f : frames_per_utterance) report.total_audio_seconds += audio_seconds(f, frame_shift_ms);
  if (!(report.total_audio_seconds > 0.0)) {
    throw ContractError("rtf_measure: total audio duration is zero");
  }
  Clock now = clock;
  if (!now) {
    now = [] {
      using namespace std::chrono;
      return duration<double>(steady_clock::now().time_since_epoch()).count();
    };
  }
  decode(0);  // warm-up, untimed
  for (std::size_t i = 0; i < frames_per_utterance.size(); ++i) {
    const double t0 = now();
    const std::size_t len = decode(i);
    const double dt = now() - t0;
    report.total_inference_seconds += dt;
    report.per_length_breakdown.emplace_back(len, dt);
  }
  report.rtf = report.total_inference_seconds / report.total_audio_seconds;
  return report;
}

}  // namespace sapf
