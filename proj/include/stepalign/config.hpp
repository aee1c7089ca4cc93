#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "stepalign/curation.hpp"
#include "stepalign/model.hpp"
#include "stepalign/synthgen.hpp"
#include "stepalign/training.hpp"

namespace stepalign {

// Every tunable in one place. `seed` is the root seed; it fans out to
// train.seed and synth.seed so one knob reseeds a whole run.
struct AppConfig {
  ModelConfig model;
  TrainConfig train;
  Stage1Config stage1;
  Stage2Config stage2;
  SynthConfig synth;
  uint64_t seed = 0;

  void validate() const;
};

// Applies one `key = value` assignment. Unknown keys and malformed values
// throw ConfigError. `zeta` sets both the stage-1 expansion ratio and the
// stage-2 one used when position = center.
void set_config_key(AppConfig& cfg, const std::string& key, const std::string& value);

// Flat key = value file, one assignment per line, '#' starts a comment.
// Unset keys keep their defaults; the whole config is validated at the end.
AppConfig load_config_file(const std::filesystem::path& path);

// Canonical round-trippable rendering; the defaults serialize to exactly the
// text shipped in data/default_config.cfg.
std::string serialize_config(const AppConfig& cfg);

}  // namespace stepalign
