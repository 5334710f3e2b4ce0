#pragma once

// Checkpoint file: a text header and a binary body.
//
//   SAPF1
//   key = value lines (model kind, model config, caller metadata,
//                      parameter count, optimizer presence)
//   end
//   per parameter: "name rank d0 d1 ...\n" followed by the float64 payload
//   optional Adam state: first then second moments per parameter, float64
//
// Payloads use native byte order.

#include <filesystem>
#include <memory>
#include <string>

#include "sapf/config.hpp"
#include "sapf/model.hpp"
#include "sapf/optim.hpp"

namespace sapf {

enum class ModelKind { kNar, kAr };

const char* to_string(ModelKind kind);

void write_model_config(const ModelConfig& cfg, KeyValueConfig& kv,
                        const std::string& prefix = "model.");
/// Overrides the fields present in `kv`; validation is left to the caller.
void read_model_config(const KeyValueConfig& kv, ModelConfig& cfg,
                       const std::string& prefix = "model.");

struct CheckpointHeader {
  ModelKind kind = ModelKind::kNar;
  ModelConfig model;
  KeyValueConfig meta;  // caller keys, stored under "meta."
  std::size_t num_params = 0;
  bool has_optimizer = false;
  std::size_t optimizer_steps = 0;
};

void save_checkpoint(const std::filesystem::path& path, ModelKind kind, const ModelConfig& cfg,
                     const ParamStore& params, const Adam* optimizer = nullptr,
                     const KeyValueConfig& meta = {});

/// Throws FormatError on a bad magic string or truncated header.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Copies stored values into `params` (names, order and shapes must match)
/// and, when both are present, the optimizer state into `optimizer`.
void load_checkpoint_values(const std::filesystem::path& path, ParamStore& params,
                            Adam* optimizer = nullptr);

std::unique_ptr<SaParaformer> load_sa_paraformer(const std::filesystem::path& path);
std::unique_ptr<ArBaseline> load_ar_baseline(const std::filesystem::path& path);

}  // namespace sapf
