#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace maskdepth::cli {

/// Record of one command invocation, written next to its outputs.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::map<std::string, std::string> outputs;

  [[nodiscard]] nlohmann::ordered_json to_json() const;
};

std::string utc_timestamp();

/// Temp file in the same directory, then rename.
void write_atomic(const std::filesystem::path& path, const std::string& contents);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace maskdepth::cli
