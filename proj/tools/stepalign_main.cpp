// stepalign: reproducible grounding experiments from the command line.
//
//   stepalign gen --out runs/data --n_videos 50 --seed 7
//   stepalign train --data runs/data --out runs/m0
//   stepalign stage1 --data runs/data --out runs/s1 --steps-from synth
//   stepalign refine --data runs/data --stage1 runs/s1/howtostep.jsonl --out runs/s2
//   stepalign eval --checkpoint runs/m0/checkpoint.nasv --data runs/data --out runs/e0
//   stepalign export-heatmap --input runs/m0/checkpoint.nasv --data runs/data \
//       --video vid-3 --out runs/h3
//   stepalign print-config > my.cfg
//
// Every config-file key doubles as a long flag (--tau 0.05); flags override
// the --config file, which overrides built-in defaults.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stepalign/commands.hpp"
#include "stepalign/config.hpp"
#include "stepalign/manifest.hpp"
#include "stepalign/util.hpp"

namespace {

using stepalign::AppConfig;
using stepalign::CmdContext;

// One pending assignment per flag occurrence; applied after --config so the
// command line wins.
struct ConfigOverrides {
  std::vector<std::pair<std::string, std::string>> assignments;
};

const char* const kConfigKeys[] = {
    "seed",       "C_v",        "C_t",
    "D",          "d",          "n_enc_layers",
    "n_dec_layers", "n_heads",  "max_T",
    "max_K",      "dropout",    "tau",
    "lr0",        "epochs",     "batch_size",
    "max_video_s", "narration_prob", "lambda_alignability",
    "weight_decay", "nu",       "zeta",
    "eps1",       "segment_target", "eps2",
    "delta_sec",  "position",   "iterations",
    "n_videos",   "T_min",      "T_max",
    "C",          "steps_min",  "steps_max",
    "noise_sigma", "alignable_frac", "jitter_s",
    "n_tasks",
};

void register_config_flags(CLI::App* cmd, std::string* config_path, ConfigOverrides* overrides) {
  cmd->add_option("--config", *config_path, "config file applied over built-in defaults")
      ->check(CLI::ExistingFile);
  for (const char* key : kConfigKeys) {
    cmd->add_option_function<std::string>(
        std::string("--") + key,
        [overrides, key](const std::string& value) {
          overrides->assignments.emplace_back(key, value);
        },
        std::string("config key ") + key);
  }
}

AppConfig resolve_config(const std::string& config_path, const ConfigOverrides& overrides) {
  AppConfig cfg;
  if (!config_path.empty()) cfg = stepalign::load_config_file(config_path);
  for (const auto& [key, value] : overrides.assignments) {
    stepalign::set_config_key(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

std::string join_args(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) out += ' ';
    out += argv[i];
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw stepalign::LoadError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grounding of procedural step sentences in instructional videos"};
  app.require_subcommand(1);

  std::string config_path;
  ConfigOverrides overrides;
  int jobs = 1;

  // --- gen -----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "synthesize a planted dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  // --- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train a grounding model on a dataset");
  std::string train_data, train_out;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "output directory")->required();

  // --- stage1 --------------------------------------------------------------
  auto* stage1 = app.add_subcommand("stage1", "chain step texts onto video timelines");
  std::string s1_data, s1_out, s1_source = "synth";
  std::string s1_summ_dir, s1_summ_cmd, s1_prompt_file;
  stage1->add_option("--data", s1_data, "dataset directory")->required();
  stage1->add_option("--out", s1_out, "output directory")->required();
  stage1->add_option("--steps-from", s1_source, "step source: synth | mock | file")
      ->check(CLI::IsMember({"synth", "mock", "file"}));
  stage1->add_option("--summarizer-dir", s1_summ_dir,
                     "exchange directory for --steps-from file");
  stage1->add_option("--summarizer-cmd", s1_summ_cmd,
                     "command invoked as '<cmd> requests.jsonl responses.jsonl'");
  stage1->add_option("--prompt-file", s1_prompt_file, "summarizer prompt text file")
      ->check(CLI::ExistingFile);

  // --- refine --------------------------------------------------------------
  auto* refine = app.add_subcommand("refine", "self-train on stage-1 labels and re-infer");
  std::string rf_data, rf_stage1, rf_out;
  refine->add_option("--data", rf_data, "dataset directory")->required();
  refine->add_option("--stage1", rf_stage1, "stage-1 howtostep.jsonl")
      ->required()
      ->check(CLI::ExistingFile);
  refine->add_option("--out", rf_out, "output directory")->required();

  // --- eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out, ev_mode = "step", ev_metric = "r_at_1";
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--out", ev_out, "output directory")->required();
  eval->add_option("--mode", ev_mode, "track to evaluate: narration | step")
      ->check(CLI::IsMember({"narration", "step"}));
  eval->add_option("--metric", ev_metric, "r_at_1 | avg_r_at_1")
      ->check(CLI::IsMember({"r_at_1", "avg_r_at_1"}));

  // --- export-heatmap --------------------------------------------------------
  auto* heatmap = app.add_subcommand("export-heatmap", "render a score matrix as CSV + PGM");
  std::string hm_input, hm_data, hm_video, hm_out, hm_mode = "step";
  heatmap->add_option("--input", hm_input, "checkpoint, or an alignment CSV to re-render")
      ->required()
      ->check(CLI::ExistingFile);
  heatmap->add_option("--data", hm_data, "dataset directory (checkpoint input only)");
  heatmap->add_option("--video", hm_video, "video id (checkpoint input only)");
  heatmap->add_option("--mode", hm_mode, "track: narration | step")
      ->check(CLI::IsMember({"narration", "step"}));
  heatmap->add_option("--out", hm_out, "output directory")->required();

  // --- print-config ----------------------------------------------------------
  auto* print_config =
      app.add_subcommand("print-config", "write the resolved config to stdout");

  for (auto* cmd : {gen, train, stage1, refine, eval, heatmap, print_config}) {
    register_config_flags(cmd, &config_path, &overrides);
    cmd->add_option("--jobs", jobs, "worker thread cap")->check(CLI::PositiveNumber);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    CmdContext ctx;
    ctx.config = resolve_config(config_path, overrides);
    ctx.command_line = join_args(argc, argv);
    ctx.jobs = jobs;

    if (gen->parsed()) {
      stepalign::cmd_gen(ctx, gen_out);
    } else if (train->parsed()) {
      stepalign::cmd_train(ctx, train_data, train_out);
    } else if (stage1->parsed()) {
      std::unique_ptr<stepalign::Summarizer> summ;
      stepalign::StepSource source = stepalign::StepSource::synth_track;
      if (s1_source == "mock") {
        source = stepalign::StepSource::summarizer;
        summ = std::make_unique<stepalign::MockSummarizer>();
      } else if (s1_source == "file") {
        source = stepalign::StepSource::summarizer;
        if (s1_summ_dir.empty()) {
          throw stepalign::UsageError("--steps-from file requires --summarizer-dir");
        }
        summ = std::make_unique<stepalign::FileProtocolSummarizer>(s1_summ_dir, s1_summ_cmd);
      }
      const std::string prompt =
          s1_prompt_file.empty() ? std::string() : read_text_file(s1_prompt_file);
      stepalign::cmd_stage1(ctx, s1_data, s1_out, source, summ.get(), prompt);
    } else if (refine->parsed()) {
      stepalign::cmd_refine(ctx, rf_data, rf_stage1, rf_out);
    } else if (eval->parsed()) {
      stepalign::cmd_eval(ctx, ev_ckpt, ev_data, stepalign::track_mode_from_string(ev_mode),
                          ev_metric, ev_out);
    } else if (heatmap->parsed()) {
      stepalign::cmd_export_heatmap(ctx, hm_input, hm_data, hm_video,
                                    stepalign::track_mode_from_string(hm_mode), hm_out);
    } else if (print_config->parsed()) {
      std::cout << stepalign::serialize_config(ctx.config);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "stepalign: " << e.what() << "\n";
    return 1;
  }
}
