#include "sapf/report.hpp"

#include <cstdio>

namespace sapf {

using nlohmann::json;

json to_json(const EditCounts& c) {
  return {{"ins", c.ins}, {"del", c.del}, {"sub", c.sub}, {"correct", c.correct},
          {"ref_len", c.ref_len}, {"rate", c.rate()}};
}

json to_json(const SDCERReport& r) {
  json per = json::object();
  for (const auto& [spk, c] : r.per_speaker) per[spk] = to_json(c);
  const EditCounts t = r.totals();
  return {{"sd_cer", r.sd_cer}, {"total_errors", r.total_errors}, {"total_ref_len", r.total_ref_len},
          {"ins", t.ins}, {"del", t.del}, {"sub", t.sub}, {"per_speaker", per}};
}

json to_json(const EpochLog& l) {
  return {{"epoch", l.epoch}, {"stage", l.stage}, {"mae", l.mae}, {"ctc", l.ctc},
          {"inter_ctc", l.inter_ctc}, {"ce", l.ce}, {"speaker", l.speaker}, {"total", l.total},
          {"infeasible_ctc", l.infeasible_ctc}, {"first_pass_errors", l.first_pass_errors},
          {"lr", l.lr}, {"seconds", l.seconds}};
}

json to_json(const RunManifest& m) {
  json epochs = json::array();
  for (const auto& e : m.epochs) epochs.push_back(to_json(e));
  return {{"config", m.config_snapshot}, {"dataset_hash", m.dataset_hash}, {"epochs", epochs},
          {"stop_reason", m.stop_reason}, {"diverged", m.diverged},
          {"diverged_step", m.diverged_step}, {"optimizer_steps", m.optimizer_steps},
          {"checkpoint_hash", m.checkpoint_hash}};
}

json to_json(const SessionResult& r) {
  return {{"session", r.name}, {"hyp_tokens", r.hypothesis.tokens},
          {"hyp_speakers", r.hypothesis.speaker_ids}, {"sd", to_json(r.sd)}, {"cer", to_json(r.cer)}};
}

json to_json(const EvalReport& r) {
  return {{"with_separator", r.with_separator}, {"sessions", r.sessions.size()},
          {"sd", to_json(r.sd)}, {"cer", to_json(r.cer)}};
}

json to_json(const RTFReport& r) {
  return {{"inference_seconds", r.total_inference_seconds},
          {"audio_seconds", r.total_audio_seconds}, {"rtf", r.rtf}};
}

json to_json(const BenchRow& row) {
  return {{"length", row.length}, {"nar", to_json(row.nar)}, {"ar", to_json(row.ar)},
          {"ratio", row.ratio}, {"nar_tokens", row.nar_tokens}, {"ar_tokens", row.ar_tokens}};
}

std::string format_eval_summary(const EvalReport& r) {
  const EditCounts t = r.sd.totals();
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "mode        %s\nsessions    %zu\nSD-CER      %.1f%%  (ins %zu, del %zu, sub %zu, ref %zu)\n"
                "CER         %.1f%%  (ins %zu, del %zu, sub %zu, ref %zu)\n",
                r.with_separator ? "with <cc>" : "without <cc>", r.sessions.size(), r.sd.sd_cer, t.ins,
                t.del, t.sub, t.ref_len, r.cer.rate(), r.cer.ins, r.cer.del, r.cer.sub, r.cer.ref_len);
  return buf;
}

std::string format_bench_table(const BenchReport& r) {
  std::string out = "length   NAR RTF     AR RTF      AR/NAR   NAR tokens   AR tokens\n";
  char buf[160];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%6zu   %-10.4f  %-10.4f  %6.2fx   %10.1f   %9.1f\n", row.length,
                  row.nar.rtf, row.ar.rtf, row.ratio, row.nar_tokens, row.ar_tokens);
    out += buf;
  }
  return out;
}

}  // namespace sapf
