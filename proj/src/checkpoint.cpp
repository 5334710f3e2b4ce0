#include "sapf/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sapf/dataset.hpp"
#include "sapf/error.hpp"

namespace sapf {

namespace {

constexpr std::string_view kMagic = "SAPF1";

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_doubles(std::string& out, std::span<const double> values) {
  const std::size_t off = out.size();
  out.resize(off + values.size() * sizeof(double));
  std::memcpy(out.data() + off, values.data(), values.size() * sizeof(double));
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;
  std::string where;

  std::string line() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError(where + ": truncated");
    std::string out = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return out;
  }
  void doubles(std::span<double> out) {
    const std::size_t n = out.size() * sizeof(double);
    if (pos + n > bytes.size()) throw FormatError(where + ": truncated payload");
    std::memcpy(out.data(), bytes.data() + pos, n);
    pos += n;
  }
};

CheckpointHeader parse_header(Reader& r) {
  if (r.line() != kMagic) throw FormatError(r.where + ": not a checkpoint (bad magic)");
  std::string text;
  for (std::string l = r.line(); l != "end"; l = r.line()) text += l + "\n";
  KeyValueConfig kv = KeyValueConfig::parse(text, r.where);

  CheckpointHeader h;
  std::string kind;
  kv.get("kind", kind);
  if (kind == "nar") {
    h.kind = ModelKind::kNar;
  } else if (kind == "ar") {
    h.kind = ModelKind::kAr;
  } else {
    throw FormatError(r.where + ": unknown model kind '" + kind + "'");
  }
  read_model_config(kv, h.model);
  kv.get("params", h.num_params);
  kv.get("optimizer", h.has_optimizer);
  kv.get("optimizer.steps", h.optimizer_steps);
  for (const auto& [k, v] : kv.values()) {
    if (k.rfind("meta.", 0) == 0) h.meta.set(k.substr(5), v);
  }
  return h;
}

}  // namespace

const char* to_string(ModelKind kind) { return kind == ModelKind::kNar ? "nar" : "ar"; }

void write_model_config(const ModelConfig& cfg, KeyValueConfig& kv, const std::string& p) {
  kv.set(p + "encoder_layers", std::to_string(cfg.encoder_layers));
  kv.set(p + "decoder_layers", std::to_string(cfg.decoder_layers));
  kv.set(p + "speaker_encoder_layers", std::to_string(cfg.speaker_encoder_layers));
  kv.set(p + "model_dim", std::to_string(cfg.attn.model_dim));
  kv.set(p + "num_heads", std::to_string(cfg.attn.num_heads));
  kv.set(p + "ff_dim", std::to_string(cfg.attn.ff_dim));
  kv.set(p + "vocab_size", std::to_string(cfg.vocab_size));
  kv.set(p + "d_spk", std::to_string(cfg.d_spk));
  kv.set(p + "feature_dim", std::to_string(cfg.feature_dim));
  kv.set(p + "inter_ctc_layer", std::to_string(cfg.inter_ctc_layer));
  kv.set(p + "sampling_factor_lambda", real(cfg.sampling_factor_lambda));
  kv.set(p + "use_cc_separator", cfg.use_cc_separator ? "true" : "false");
  kv.set(p + "cif_threshold", real(cfg.cif_threshold));
  kv.set(p + "cif_tail_threshold", real(cfg.cif_tail_threshold));
  kv.set(p + "decoder_self_attention", cfg.decoder_self_attention ? "true" : "false");
}

void read_model_config(const KeyValueConfig& kv, ModelConfig& cfg, const std::string& p) {
  kv.get(p + "encoder_layers", cfg.encoder_layers);
  kv.get(p + "decoder_layers", cfg.decoder_layers);
  kv.get(p + "speaker_encoder_layers", cfg.speaker_encoder_layers);
  kv.get(p + "model_dim", cfg.attn.model_dim);
  kv.get(p + "num_heads", cfg.attn.num_heads);
  kv.get(p + "ff_dim", cfg.attn.ff_dim);
  kv.get(p + "vocab_size", cfg.vocab_size);
  kv.get(p + "d_spk", cfg.d_spk);
  kv.get(p + "feature_dim", cfg.feature_dim);
  kv.get(p + "inter_ctc_layer", cfg.inter_ctc_layer);
  kv.get(p + "sampling_factor_lambda", cfg.sampling_factor_lambda);
  kv.get(p + "use_cc_separator", cfg.use_cc_separator);
  kv.get(p + "cif_threshold", cfg.cif_threshold);
  kv.get(p + "cif_tail_threshold", cfg.cif_tail_threshold);
  kv.get(p + "decoder_self_attention", cfg.decoder_self_attention);
}

void save_checkpoint(const std::filesystem::path& path, ModelKind kind, const ModelConfig& cfg,
                     const ParamStore& params, const Adam* optimizer, const KeyValueConfig& meta) {
  KeyValueConfig kv;
  kv.set("kind", to_string(kind));
  write_model_config(cfg, kv);
  for (const auto& [k, v] : meta.values()) kv.set("meta." + k, v);
  kv.set("params", std::to_string(params.params().size()));
  kv.set("optimizer", optimizer ? "true" : "false");
  if (optimizer) kv.set("optimizer.steps", std::to_string(optimizer->steps()));

  std::string out = std::string(kMagic) + "\n" + kv.dump() + "end\n";
  for (const auto& [name, t] : params.params()) {
    out += name + " " + std::to_string(t.dim());
    for (std::size_t d : t.shape()) out += " " + std::to_string(d);
    out += "\n";
    append_doubles(out, t.data());
  }
  if (optimizer) {
    for (std::size_t i = 0; i < params.params().size(); ++i) {
      append_doubles(out, optimizer->first_moments()[i]);
      append_doubles(out, optimizer->second_moments()[i]);
    }
  }
  // Write-then-rename so an interrupted save never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file(tmp, out);
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  Reader r{bytes, 0, path.string()};
  return parse_header(r);
}

void load_checkpoint_values(const std::filesystem::path& path, ParamStore& params,
                            Adam* optimizer) {
  const std::string bytes = read_file(path);
  Reader r{bytes, 0, path.string()};
  const CheckpointHeader h = parse_header(r);
  const auto& named = params.params();
  if (h.num_params != named.size()) {
    throw FormatError(r.where + ": " + std::to_string(h.num_params) + " parameters stored, model has " +
                      std::to_string(named.size()));
  }
  for (const auto& [name, t] : named) {
    std::istringstream in(r.line());
    std::string stored;
    std::size_t rank = 0;
    in >> stored >> rank;
    Shape shape(rank);
    for (auto& d : shape) in >> d;
    if (!in || stored != name || shape != t.shape()) {
      throw FormatError(r.where + ": expected parameter " + name + " " + shape_str(t.shape()) +
                        ", found " + stored + " " + shape_str(shape));
    }
    Tensor target = t;
    r.doubles(target.mutable_data());
  }
  if (optimizer && h.has_optimizer) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      r.doubles(optimizer->first_moments()[i]);
      r.doubles(optimizer->second_moments()[i]);
    }
    optimizer->set_steps(h.optimizer_steps);
  }
}

std::unique_ptr<SaParaformer> load_sa_paraformer(const std::filesystem::path& path) {
  const auto h = read_checkpoint_header(path);
  if (h.kind != ModelKind::kNar) throw FormatError(path.string() + ": not an SA-Paraformer checkpoint");
  auto model = std::make_unique<SaParaformer>(h.model, 0);
  load_checkpoint_values(path, model->params());
  return model;
}

std::unique_ptr<ArBaseline> load_ar_baseline(const std::filesystem::path& path) {
  const auto h = read_checkpoint_header(path);
  if (h.kind != ModelKind::kAr) throw FormatError(path.string() + ": not an AR baseline checkpoint");
  auto model = std::make_unique<ArBaseline>(h.model, 0);
  load_checkpoint_values(path, model->params());
  return model;
}

}  // namespace sapf
