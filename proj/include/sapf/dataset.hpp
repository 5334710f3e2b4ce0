#pragma once

// On-disk dataset layout (one directory):
//
//   manifest.txt     "SAPFDATA1", then key = value lines: the generator spec,
//                    first_index and the session names
//   profiles.txt     speaker pool, one "id v1 v2 ..." line per speaker
//   <name>.feat      uint64 T, uint64 F, then T*F float64 (native byte order)
//   <name>.tok       one "token speaker start end" line per timed token
//   <name>.inv       "true_count K", then one speaker id per line
//
// Reals are written with 17 significant digits so write -> read -> write is
// byte-identical.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sapf/synth.hpp"

namespace sapf {

/// File name and contents of every file write_dataset produces, in manifest
/// order.
std::vector<std::pair<std::string, std::string>> dataset_files(const Dataset& ds);

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Throws FormatError on missing files, a bad magic line or malformed records.
Dataset read_dataset(const std::filesystem::path& dir);

/// Git blob id: SHA-1 of "blob <size>\0" + bytes, lowercase hex.
std::string git_blob_hash(std::string_view bytes);
/// Tree-style id over every file of a dataset directory, in manifest order.
std::string dataset_hash(const std::filesystem::path& dir);
/// Same id computed from memory; equals the directory hash after writing.
std::string dataset_hash(const Dataset& ds);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace sapf
