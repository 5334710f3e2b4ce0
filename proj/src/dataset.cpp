#include "sapf/dataset.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>

#include "sapf/error.hpp"

namespace sapf {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "SAPFDATA1";

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string features_bytes(const Tensor& x) {
  const std::uint64_t header[2] = {x.rows(), x.cols()};
  std::string out(sizeof header + x.numel() * sizeof(double), '\0');
  std::memcpy(out.data(), header, sizeof header);
  std::memcpy(out.data() + sizeof header, x.data().data(), x.numel() * sizeof(double));
  return out;
}

Tensor parse_features(const std::string& bytes, const std::string& what) {
  std::uint64_t header[2];
  if (bytes.size() < sizeof header) throw FormatError(what + ": truncated header");
  std::memcpy(header, bytes.data(), sizeof header);
  const std::size_t n = header[0] * header[1];
  if (bytes.size() != sizeof header + n * sizeof(double)) {
    throw FormatError(what + ": size does not match its T x F header");
  }
  std::vector<double> data(n);
  std::memcpy(data.data(), bytes.data() + sizeof header, n * sizeof(double));
  return Tensor::from_data({header[0], header[1]}, std::move(data));
}

std::string tokens_text(const std::vector<TimedToken>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    out += std::to_string(t.token) + " " + t.speaker + " " + std::to_string(t.start_frame) + " " +
           std::to_string(t.end_frame) + "\n";
  }
  return out;
}

std::string inventory_text(const SpeakerInventory& inv) {
  std::string out = "true_count " + std::to_string(inv.true_count) + "\n";
  for (const auto& p : inv.profiles) out += p.id + "\n";
  return out;
}

std::string profiles_text(const std::vector<SpeakerProfile>& pool) {
  std::string out;
  for (const auto& p : pool) {
    out += p.id;
    for (double v : p.vector) out += " " + real(v);
    out += "\n";
  }
  return out;
}

std::string manifest_text(const Dataset& ds) {
  KeyValueConfig kv;
  ds.spec.write(kv);
  kv.set("first_index", std::to_string(ds.first_index));
  std::string names;
  for (const auto& s : ds.sessions) names += (names.empty() ? "" : " ") + s.name;
  kv.set("sessions", names);
  return std::string(kMagic) + "\n" + kv.dump();
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<std::string> session_names(const fs::path& dir, std::string* manifest_out = nullptr,
                                       KeyValueConfig* kv_out = nullptr) {
  const std::string manifest = read_file(dir / "manifest.txt");
  const auto nl = manifest.find('\n');
  if (manifest.substr(0, nl) != kMagic) {
    throw FormatError((dir / "manifest.txt").string() + ": not a dataset manifest");
  }
  KeyValueConfig kv = KeyValueConfig::parse(
      nl == std::string::npos ? std::string_view{} : std::string_view(manifest).substr(nl + 1),
      (dir / "manifest.txt").string());
  std::string names;
  kv.get("sessions", names);
  if (manifest_out) *manifest_out = manifest;
  if (kv_out) *kv_out = kv;
  return split_words(names);
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

std::vector<std::pair<std::string, std::string>> dataset_files(const Dataset& ds) {
  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back("manifest.txt", manifest_text(ds));
  files.emplace_back("profiles.txt", profiles_text(ds.pool));
  for (const auto& s : ds.sessions) {
    files.emplace_back(s.name + ".feat", features_bytes(s.features));
    files.emplace_back(s.name + ".tok", tokens_text(s.tokens));
    files.emplace_back(s.name + ".inv", inventory_text(s.inventory));
  }
  return files;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [name, bytes] : dataset_files(ds)) write_file(dir / name, bytes);
}

Dataset read_dataset(const fs::path& dir) {
  KeyValueConfig kv;
  const auto names = session_names(dir, nullptr, &kv);
  Dataset ds;
  ds.spec.read(kv);
  kv.get("first_index", ds.first_index);
  kv.reject_unused();

  {
    std::istringstream in(read_file(dir / "profiles.txt"));
    for (std::string line; std::getline(in, line);) {
      auto w = split_words(line);
      if (w.empty()) continue;
      SpeakerProfile p;
      p.id = w[0];
      for (std::size_t i = 1; i < w.size(); ++i) p.vector.push_back(std::stod(w[i]));
      ds.pool.push_back(std::move(p));
    }
  }
  auto find_profile = [&](const std::string& id) -> const SpeakerProfile& {
    for (const auto& p : ds.pool) {
      if (p.id == id) return p;
    }
    throw FormatError("dataset references unknown speaker " + id);
  };

  for (const auto& name : names) {
    Session s;
    s.name = name;
    s.features = parse_features(read_file(dir / (name + ".feat")), name + ".feat");
    std::istringstream tok(read_file(dir / (name + ".tok")));
    for (std::string line; std::getline(tok, line);) {
      auto w = split_words(line);
      if (w.empty()) continue;
      if (w.size() != 4) throw FormatError(name + ".tok: expected 'token speaker start end'");
      s.tokens.push_back({std::stoul(w[0]), w[1], std::stoul(w[2]), std::stoul(w[3])});
    }
    std::istringstream inv(read_file(dir / (name + ".inv")));
    std::string line;
    std::getline(inv, line);
    auto head = split_words(line);
    if (head.size() != 2 || head[0] != "true_count") {
      throw FormatError(name + ".inv: missing true_count line");
    }
    s.inventory.true_count = std::stoul(head[1]);
    while (std::getline(inv, line)) {
      if (!line.empty()) s.inventory.profiles.push_back(find_profile(line));
    }
    s.inventory.validate();
    ds.sessions.push_back(std::move(s));
  }
  return ds;
}

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : std::span(digest, len)) {
    out += kHex[c >> 4];
    out += kHex[c & 15];
  }
  return out;
}

std::string dataset_hash(const fs::path& dir) {
  const auto names = session_names(dir);
  std::string tree;
  auto entry = [&](const std::string& file) {
    tree += file + " " + git_blob_hash(read_file(dir / file)) + "\n";
  };
  entry("manifest.txt");
  entry("profiles.txt");
  for (const auto& n : names) {
    entry(n + ".feat");
    entry(n + ".tok");
    entry(n + ".inv");
  }
  return git_blob_hash(tree);
}

std::string dataset_hash(const Dataset& ds) {
  std::string tree;
  for (const auto& [name, bytes] : dataset_files(ds)) tree += name + " " + git_blob_hash(bytes) + "\n";
  return git_blob_hash(tree);
}

}  // namespace sapf
