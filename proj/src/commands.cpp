#include "stepalign/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stepalign/evaluation.hpp"
#include "stepalign/manifest.hpp"
#include "stepalign/model.hpp"
#include "stepalign/synthgen.hpp"
#include "stepalign/training.hpp"
#include "stepalign/util.hpp"

namespace stepalign {

namespace {

int64_t now_unix() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

// Manifest goes first so a crashed run still identifies itself.
void start_run(const CmdContext& ctx, const std::filesystem::path& out_dir,
               std::vector<std::string> outputs) {
  RunManifest m;
  m.command = ctx.command_line;
  m.config_snapshot = serialize_config(ctx.config);
  m.seed = ctx.config.seed;
  m.version = stepalign_version();
  m.started_at_unix = now_unix();
  m.outputs = std::move(outputs);
  write_run_manifest(out_dir, m);
}

}  // namespace

void cmd_gen(const CmdContext& ctx, const std::filesystem::path& out_dir) {
  ctx.config.synth.validate();
  start_run(ctx, out_dir, {"manifest.jsonl", "videos"});
  Dataset ds = generate(ctx.config.synth);
  save_dataset(out_dir, ds);
  log_info("gen: wrote " + std::to_string(ds.videos.size()) + " videos to " + out_dir.string());
}

void cmd_train(const CmdContext& ctx, const std::filesystem::path& dataset_dir,
               const std::filesystem::path& out_dir) {
  ctx.config.model.validate();
  ctx.config.train.validate();
  Dataset ds = load_dataset(dataset_dir);
  start_run(ctx, out_dir, {"checkpoint.nasv", "loss.csv"});
  Rng init_rng(ctx.config.train.seed);
  ModelParams params = ModelParams::init(ctx.config.model, init_rng);
  TrainResult result = train(ds, params, ctx.config.train);
  save_checkpoint(out_dir / "checkpoint.nasv", params);
  write_loss_csv(out_dir / "loss.csv", result.curve);
  log_info("train: " + std::to_string(result.curve.size()) + " epochs, final loss " +
           (result.curve.empty() ? std::string("n/a")
                                 : format_double(result.curve.back().mean_loss)));
}

void cmd_stage1(const CmdContext& ctx, const std::filesystem::path& dataset_dir,
                const std::filesystem::path& out_dir, StepSource source, Summarizer* summarizer,
                const std::string& prompt) {
  ctx.config.stage1.validate();
  Dataset ds = load_dataset(dataset_dir);
  start_run(ctx, out_dir, {"howtostep.jsonl"});
  StepSet steps = run_stage1(ds, source, summarizer, prompt, ctx.config.stage1, ctx.jobs);
  const auto records = flatten(steps);
  write_step_records(out_dir / "howtostep.jsonl", records);
  int kept = 0;
  for (const auto& r : records) kept += r.discarded ? 0 : 1;
  log_info("stage1: " + std::to_string(kept) + "/" + std::to_string(records.size()) +
           " steps kept");
}

namespace {

// Rebuilds the in-memory step set cmd_refine needs from a records file. The
// on-disk format carries no feature rows, so each step's row is recovered by
// text match against the video's tracks: step tracks verbatim, narration
// tracks after discourse-marker stripping (the inverse of how summarizer
// steps were born).
StepSet step_set_from_records(const Dataset& ds, const std::vector<StepRecord>& records) {
  std::unordered_map<std::string, std::size_t> slot;
  StepSet out;
  for (const auto& rec : records) {
    const VideoEntry* video = ds.find(rec.video_id);
    if (video == nullptr) {
      throw ValidationError("refine: records reference unknown video '" + rec.video_id + "'");
    }
    auto [it, fresh] = slot.emplace(rec.video_id, out.videos.size());
    if (fresh) {
      VideoSteps vs;
      vs.video_id = rec.video_id;
      out.videos.push_back(std::move(vs));
    }
    VideoSteps& vs = out.videos[it->second];

    const double* row = nullptr;
    int dim = 0;
    for (const auto& td : video->tracks) {
      for (std::size_t k = 0; k < td.track.sentences.size(); ++k) {
        const std::string& text = td.track.sentences[k].text;
        const bool match = td.track.mode == TrackMode::step
                               ? text == rec.step_text
                               : strip_discourse_markers(text) == rec.step_text;
        if (match) {
          row = td.features.rows.data().data() +
                static_cast<std::size_t>(k) * static_cast<std::size_t>(td.features.dim());
          dim = td.features.dim();
          break;
        }
      }
      if (row != nullptr) break;
    }
    if (row == nullptr) {
      throw PipelineError("refine: no sentence in video '" + rec.video_id +
                          "' matches step text '" + rec.step_text + "'");
    }
    if (vs.features.defined() && vs.features.cols() != dim) {
      throw ShapeError("refine: feature width changed within video '" + rec.video_id + "'");
    }

    std::vector<double> data;
    if (vs.features.defined()) data = vs.features.data();
    data.insert(data.end(), row, row + dim);
    vs.texts.push_back(rec.step_text);
    vs.records.push_back(rec);
    vs.features =
        Tensor::from_data(static_cast<int>(vs.texts.size()), dim, std::move(data));
  }
  return out;
}

}  // namespace

void cmd_refine(const CmdContext& ctx, const std::filesystem::path& dataset_dir,
                const std::filesystem::path& stage1_file, const std::filesystem::path& out_dir) {
  ctx.config.validate();
  Dataset ds = load_dataset(dataset_dir);
  const auto records = read_step_records(stage1_file);
  StepSet stage1 = step_set_from_records(ds, records);
  start_run(ctx, out_dir, {"howtostep.jsonl", "checkpoint.nasv", "loss.csv"});
  Stage2Result result = stage2_refine(ds, stage1, ctx.config.model, ctx.config.train,
                                      ctx.config.stage2, ctx.jobs);
  const auto refined = flatten(result.steps);
  write_step_records(out_dir / "howtostep.jsonl", refined);
  save_checkpoint(out_dir / "checkpoint.nasv", result.model);
  write_loss_csv(out_dir / "loss.csv", result.training.curve);
  int kept = 0;
  for (const auto& r : refined) kept += r.discarded ? 0 : 1;
  log_info("refine: " + std::to_string(kept) + "/" + std::to_string(refined.size()) +
           " steps kept");
}

void cmd_eval(const CmdContext& ctx, const std::filesystem::path& checkpoint_path,
              const std::filesystem::path& dataset_dir, TrackMode mode,
              const std::string& metric, const std::filesystem::path& out_dir) {
  ModelParams params = load_checkpoint(checkpoint_path);
  Dataset ds = load_dataset(dataset_dir);
  start_run(ctx, out_dir, {"report.json"});
  EvalReport report = evaluate_model(params, ds, mode, metric, ctx.jobs);
  write_report(out_dir / "report.json", report);
  log_info("eval: " + report.metric + " = " + format_double(report.value));
}

std::string encode_pgm(const Tensor& values) {
  if (!values.defined()) throw UsageError("encode_pgm: undefined matrix");
  std::string out = "P5\n" + std::to_string(values.cols()) + " " +
                    std::to_string(values.rows()) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(values.rows()) *
                               static_cast<std::size_t>(values.cols()));
  for (int i = 0; i < values.rows(); ++i) {
    for (int j = 0; j < values.cols(); ++j) {
      double v = values.at(i, j);
      long pixel = std::lround(255.0 * (v + 1.0) / 2.0);
      if (pixel < 0) pixel = 0;
      if (pixel > 255) pixel = 255;
      out.push_back(static_cast<char>(static_cast<unsigned char>(pixel)));
    }
  }
  return out;
}

void cmd_export_heatmap(const CmdContext& ctx, const std::filesystem::path& input,
                        const std::filesystem::path& dataset_dir, const std::string& video_id,
                        TrackMode mode, const std::filesystem::path& out_dir) {
  AlignmentMatrix A;
  if (input.extension() == ".csv") {
    A = read_alignment_csv(input);
  } else {
    ModelParams params = load_checkpoint(input);
    Dataset ds = load_dataset(dataset_dir);
    const VideoEntry* video = ds.find(video_id);
    if (video == nullptr) throw UsageError("export-heatmap: no video '" + video_id + "'");
    const TrackData* td = video->track_by_mode(mode);
    if (td == nullptr) {
      throw UsageError("export-heatmap: video '" + video_id + "' has no " +
                       std::string(to_string(mode)) + " track");
    }
    NoGradGuard ng;
    A = forward(video->features.rows, td->features.rows, mode, params).A;
  }
  start_run(ctx, out_dir, {"alignment.csv", "heatmap.pgm"});
  write_alignment_csv(out_dir / "alignment.csv", A);
  atomic_write_file(out_dir / "heatmap.pgm", encode_pgm(A.values));
  log_info("export-heatmap: " + std::to_string(A.K()) + " x " + std::to_string(A.T()) +
           " matrix rendered");
}

}  // namespace stepalign
