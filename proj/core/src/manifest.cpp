#include "glab/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace glab {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(content.data(),
              static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

std::string RunManifest::to_json_text() const {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  j["stages"] = nlohmann::json::array();
  for (const auto& [name, st] : stages) {
    j["stages"].push_back({{"name", name}, {"status", st}});
  }
  j["files"] = nlohmann::json::array();
  for (const ManifestFile& f : files) {
    j["files"].push_back(
        {{"path", f.path}, {"bytes", f.bytes}, {"checksum", f.checksum}});
  }
  j["timings_ms"] = timings_ms;
  return j.dump(2) + "\n";
}

}  // namespace glab
