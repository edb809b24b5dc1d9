#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace glab {

inline constexpr const char* kToolVersion = "0.1.0";

std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

std::string read_file(const std::string& path);
// Writes through a temp file in the same directory and renames it into
// place, so readers never observe a half-written file.
void write_file_atomic(const std::string& path, std::string_view content);

struct ManifestFile {
  std::string path;  // relative to the run directory
  std::size_t bytes = 0;
  std::string checksum;
};

// Per-run bookkeeping. Everything except `timings_ms` is deterministic for
// a given config and seed; wall-clock data lives only in that field.
struct RunManifest {
  std::string config_hash;
  std::string tool_version = kToolVersion;
  std::string command;
  std::string status = "ok";  // "ok" or "failed"
  std::string error;
  std::vector<std::pair<std::string, std::string>> stages;  // (name, status)
  std::vector<ManifestFile> files;
  std::map<std::string, double> timings_ms;

  std::string to_json_text() const;
};

}  // namespace glab
