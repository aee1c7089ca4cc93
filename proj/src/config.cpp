#include "stepalign/config.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

#include "stepalign/util.hpp"

namespace stepalign {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
  size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != value.size() || value.empty()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  size_t pos = 0;
  uint64_t out = 0;
  try {
    out = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != value.size() || value.empty() || value[0] == '-') {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" +
                      value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != value.size() || value.empty()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
  return out;
}

}  // namespace

void AppConfig::validate() const {
  model.validate();
  train.validate();
  stage1.validate();
  stage2.validate();
  synth.validate();
}

void set_config_key(AppConfig& cfg, const std::string& key, const std::string& value) {
  // Root seed fans out; per-module seeds are not independently addressable.
  if (key == "seed") {
    cfg.seed = parse_u64(key, value);
    cfg.train.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
  } else if (key == "C_v") {
    cfg.model.C_v = static_cast<int>(parse_int(key, value));
  } else if (key == "C_t") {
    cfg.model.C_t = static_cast<int>(parse_int(key, value));
  } else if (key == "D") {
    cfg.model.D = static_cast<int>(parse_int(key, value));
  } else if (key == "d") {
    cfg.model.d = static_cast<int>(parse_int(key, value));
  } else if (key == "n_enc_layers") {
    cfg.model.n_enc_layers = static_cast<int>(parse_int(key, value));
  } else if (key == "n_dec_layers") {
    cfg.model.n_dec_layers = static_cast<int>(parse_int(key, value));
  } else if (key == "n_heads") {
    cfg.model.n_heads = static_cast<int>(parse_int(key, value));
  } else if (key == "max_T") {
    cfg.model.max_T = static_cast<int>(parse_int(key, value));
  } else if (key == "max_K") {
    cfg.model.max_K = static_cast<int>(parse_int(key, value));
  } else if (key == "dropout") {
    cfg.model.dropout = parse_double(key, value);
  } else if (key == "tau") {
    cfg.train.tau = parse_double(key, value);
  } else if (key == "lr0") {
    cfg.train.lr0 = parse_double(key, value);
  } else if (key == "epochs") {
    cfg.train.epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "batch_size") {
    cfg.train.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "max_video_s") {
    cfg.train.max_video_s = static_cast<int>(parse_int(key, value));
  } else if (key == "narration_prob") {
    cfg.train.narration_prob = parse_double(key, value);
  } else if (key == "lambda_alignability") {
    cfg.train.lambda_alignability = parse_double(key, value);
  } else if (key == "weight_decay") {
    cfg.train.weight_decay = parse_double(key, value);
  } else if (key == "nu") {
    cfg.stage1.nu = parse_double(key, value);
  } else if (key == "zeta") {
    cfg.stage1.zeta = parse_double(key, value);
    cfg.stage2.zeta = cfg.stage1.zeta;
  } else if (key == "eps1") {
    cfg.stage1.eps1 = parse_double(key, value);
  } else if (key == "segment_target") {
    cfg.stage1.segment_target = static_cast<int>(parse_int(key, value));
  } else if (key == "eps2") {
    cfg.stage2.eps2 = parse_double(key, value);
  } else if (key == "delta_sec") {
    cfg.stage2.delta_sec = static_cast<int>(parse_int(key, value));
  } else if (key == "position") {
    cfg.stage2.position = position_from_string(value);
  } else if (key == "iterations") {
    cfg.stage2.iterations = static_cast<int>(parse_int(key, value));
  } else if (key == "n_videos") {
    cfg.synth.n_videos = static_cast<int>(parse_int(key, value));
  } else if (key == "T_min") {
    cfg.synth.T_min = static_cast<int>(parse_int(key, value));
  } else if (key == "T_max") {
    cfg.synth.T_max = static_cast<int>(parse_int(key, value));
  } else if (key == "C") {
    cfg.synth.C = static_cast<int>(parse_int(key, value));
  } else if (key == "steps_min") {
    cfg.synth.steps_min = static_cast<int>(parse_int(key, value));
  } else if (key == "steps_max") {
    cfg.synth.steps_max = static_cast<int>(parse_int(key, value));
  } else if (key == "noise_sigma") {
    cfg.synth.noise_sigma = parse_double(key, value);
  } else if (key == "alignable_frac") {
    cfg.synth.alignable_frac = parse_double(key, value);
  } else if (key == "jitter_s") {
    cfg.synth.jitter_s = static_cast<int>(parse_int(key, value));
  } else if (key == "n_tasks") {
    cfg.synth.n_tasks = static_cast<int>(parse_int(key, value));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

AppConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": cannot open config file");
  AppConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": empty key");
    }
    try {
      set_config_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const AppConfig& cfg) {
  std::string out;
  auto put_i = [&out](const char* key, long long v) {
    out += key;
    out += " = ";
    out += std::to_string(v);
    out += "\n";
  };
  auto put_d = [&out](const char* key, double v) {
    out += key;
    out += " = ";
    out += format_double(v);
    out += "\n";
  };

  out += "# stepalign configuration: 'key = value' per line, '#' starts a comment.\n";
  out += "\n";
  out += "# root seed, fanned out to data generation and training\n";
  put_i("seed", static_cast<long long>(cfg.seed));
  out += "\n";
  out += "# -- grounding network --\n";
  out += "# raw feature widths: video frames and sentence embeddings\n";
  put_i("C_v", cfg.model.C_v);
  put_i("C_t", cfg.model.C_t);
  out += "# transformer width and the narrower head both sequences project into\n";
  put_i("D", cfg.model.D);
  put_i("d", cfg.model.d);
  put_i("n_enc_layers", cfg.model.n_enc_layers);
  put_i("n_dec_layers", cfg.model.n_dec_layers);
  put_i("n_heads", cfg.model.n_heads);
  out += "# capacity bounds: longest video (seconds) and most sentences per track\n";
  put_i("max_T", cfg.model.max_T);
  put_i("max_K", cfg.model.max_K);
  put_d("dropout", cfg.model.dropout);
  out += "\n";
  out += "# -- training --\n";
  out += "# contrastive temperature\n";
  put_d("tau", cfg.train.tau);
  out += "# peak learning rate, cosine-decayed to zero\n";
  put_d("lr0", cfg.train.lr0);
  put_i("epochs", cfg.train.epochs);
  put_i("batch_size", cfg.train.batch_size);
  out += "# videos longer than this many seconds are truncated\n";
  put_i("max_video_s", cfg.train.max_video_s);
  out += "# probability a sample is served as ordered narrations instead of shuffled steps\n";
  put_d("narration_prob", cfg.train.narration_prob);
  put_d("lambda_alignability", cfg.train.lambda_alignability);
  put_d("weight_decay", cfg.train.weight_decay);
  out += "\n";
  out += "# -- stage 1: chaining narrations into step pseudo-labels --\n";
  out += "# temperature of the step/narration text-similarity softmax\n";
  put_d("nu", cfg.stage1.nu);
  out += "# window expansion keeps timestamps scoring >= zeta * peak\n";
  out += "# (stage 1 always, stage 2 when position = center)\n";
  put_d("zeta", cfg.stage1.zeta);
  out += "# steps peaking below eps1 are discarded\n";
  put_d("eps1", cfg.stage1.eps1);
  out += "# narration sentences per transcript segment\n";
  put_i("segment_target", cfg.stage1.segment_target);
  out += "\n";
  out += "# -- stage 2: self-training refinement --\n";
  out += "# model-score threshold for keeping a refined step\n";
  put_d("eps2", cfg.stage2.eps2);
  out += "# refined window length in seconds, and where it sits relative to the peak\n";
  put_i("delta_sec", cfg.stage2.delta_sec);
  out += std::string("position = ") + to_string(cfg.stage2.position) + "\n";
  put_i("iterations", cfg.stage2.iterations);
  out += "\n";
  out += "# -- synthetic data --\n";
  put_i("n_videos", cfg.synth.n_videos);
  out += "# video length range in seconds, one feature per second\n";
  put_i("T_min", cfg.synth.T_min);
  put_i("T_max", cfg.synth.T_max);
  out += "# planted feature width\n";
  put_i("C", cfg.synth.C);
  put_i("steps_min", cfg.synth.steps_min);
  put_i("steps_max", cfg.synth.steps_max);
  put_d("noise_sigma", cfg.synth.noise_sigma);
  out += "# fraction of narration sentences that describe a visible action\n";
  put_d("alignable_frac", cfg.synth.alignable_frac);
  out += "# max seconds each narration window boundary drifts off the true one\n";
  put_i("jitter_s", cfg.synth.jitter_s);
  put_i("n_tasks", cfg.synth.n_tasks);
  return out;
}

}  // namespace stepalign
