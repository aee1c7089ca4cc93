#include "stepalign/manifest.hpp"

#include <nlohmann/json.hpp>

#include "stepalign/util.hpp"

#ifndef STEPALIGN_VERSION
#define STEPALIGN_VERSION "0.0.0"
#endif

namespace stepalign {

const char* stepalign_version() { return STEPALIGN_VERSION; }

std::string manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config"] = m.config_snapshot;
  j["outputs"] = m.outputs;
  j["seed"] = m.seed;
  j["started_at_unix"] = m.started_at_unix;
  j["version"] = m.version;
  return j.dump(2) + "\n";
}

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  atomic_write_file(dir / "run_manifest.json", manifest_to_json(m));
}

}  // namespace stepalign
