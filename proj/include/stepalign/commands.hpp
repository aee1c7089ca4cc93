#pragma once

#include <filesystem>
#include <string>

#include "stepalign/config.hpp"
#include "stepalign/curation.hpp"
#include "stepalign/datamodel.hpp"

namespace stepalign {

// Shared command inputs. `command_line` is recorded verbatim in the run
// manifest; `jobs` caps worker threads inside a command.
struct CmdContext {
  AppConfig config;
  std::string command_line;
  int jobs = 1;
};

// Every command writes run_manifest.json into its output directory before any
// other output, and throws (Error subclasses) instead of exiting. Outputs are
// byte-stable for a fixed config and seed; only the manifest's
// started_at_unix field moves between runs.

// Synthesizes a planted dataset into out_dir.
void cmd_gen(const CmdContext& ctx, const std::filesystem::path& out_dir);

// Trains on the dataset's tracks: checkpoint.nasv + loss.csv.
void cmd_train(const CmdContext& ctx, const std::filesystem::path& dataset_dir,
               const std::filesystem::path& out_dir);

// Chains step texts onto the video timeline: howtostep.jsonl. `summarizer`
// may be null for StepSource::synth_track.
void cmd_stage1(const CmdContext& ctx, const std::filesystem::path& dataset_dir,
                const std::filesystem::path& out_dir, StepSource source,
                Summarizer* summarizer = nullptr, const std::string& prompt = "");

// Self-training refinement of a stage-1 file: howtostep.jsonl + checkpoint.nasv
// + loss.csv. Step features are re-derived by matching each record's text
// against the video's tracks (step tracks verbatim, narration tracks after
// discourse-marker stripping); records with no matching sentence are rejected.
void cmd_refine(const CmdContext& ctx, const std::filesystem::path& dataset_dir,
                const std::filesystem::path& stage1_file, const std::filesystem::path& out_dir);

// Scores a checkpoint on a dataset: report.json.
void cmd_eval(const CmdContext& ctx, const std::filesystem::path& checkpoint_path,
              const std::filesystem::path& dataset_dir, TrackMode mode,
              const std::string& metric, const std::filesystem::path& out_dir);

// Renders one video's score matrix: alignment.csv + heatmap.pgm. `input` is
// either a checkpoint (forward pass over the chosen track) or an existing
// alignment CSV (re-emitted canonically; dataset and video ignored).
void cmd_export_heatmap(const CmdContext& ctx, const std::filesystem::path& input,
                        const std::filesystem::path& dataset_dir, const std::string& video_id,
                        TrackMode mode, const std::filesystem::path& out_dir);

// Binary P5 image of a score matrix; cosine [-1, 1] maps affinely onto
// [0, 255] so sign survives (gray = 0). One pixel per matrix entry.
std::string encode_pgm(const Tensor& values);

}  // namespace stepalign
