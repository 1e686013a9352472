#include "manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "maskdepth/common.hpp"

namespace maskdepth::cli {

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["code_version"] = MASKDEPTH_VERSION;
  j["seed"] = seed;
  j["started"] = started;
  j["finished"] = finished.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(finished);
  j["config"] = config;
  j["outputs"] = outputs;
  return j;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << contents;
    if (!out) throw DataError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  write_atomic(path, manifest.to_json().dump(2) + "\n");
}

}  // namespace maskdepth::cli
