#pragma once

// JSON records for logs and reports (one object per line in log files).

#include <json.hpp>

#include "sapf/evaluate.hpp"
#include "sapf/metrics.hpp"
#include "sapf/train.hpp"

namespace sapf {

nlohmann::json to_json(const EditCounts& c);
nlohmann::json to_json(const SDCERReport& r);
nlohmann::json to_json(const EpochLog& log);
nlohmann::json to_json(const RunManifest& m);
nlohmann::json to_json(const SessionResult& r);
/// Summary only; per-session records are emitted separately.
nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const RTFReport& r);
nlohmann::json to_json(const BenchRow& row);

/// Human-readable tables.
std::string format_eval_summary(const EvalReport& r);
std::string format_bench_table(const BenchReport& r);

}  // namespace sapf
