#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stepalign {

// Reproducibility record dropped next to every command's outputs. Two runs of
// the same command and config differ only in started_at_unix.
struct RunManifest {
  std::string command;          // argv joined with spaces
  std::string config_snapshot;  // canonical serialize_config text
  uint64_t seed = 0;
  std::string version;
  int64_t started_at_unix = 0;
  std::vector<std::string> outputs;  // files the command writes, relative to its out dir
};

std::string manifest_to_json(const RunManifest& m);

// Writes <dir>/run_manifest.json (atomic replace).
void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m);

const char* stepalign_version();

}  // namespace stepalign
