#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stepalign/datamodel.hpp"
#include "stepalign/model.hpp"

namespace stepalign {

struct EvalItem {
  std::string video_id;
  std::optional<std::string> task_id;
  bool alignable = false;
  std::optional<TimeWindow> gt_window;
  int predicted_peak = 0;
};

// Fraction of alignable items whose peak lands inside the ground-truth window
// (inclusive bounds). Unalignable items never count, in either direction.
double recall_at_1(const std::vector<EvalItem>& items);

// Unweighted mean of per-task recall; tasks without a single alignable item
// are skipped with a warning.
double avg_recall_at_1(const std::vector<EvalItem>& items);

struct VideoEval {
  std::string video_id;
  int n_alignable = 0;
  int n_recalled = 0;
};

struct EvalReport {
  std::string metric;  // "r_at_1" | "avg_r_at_1"
  double value = 0.0;
  int n_sentences = 0;  // alignable sentences scored
  std::optional<int> n_tasks;
  std::vector<VideoEval> per_video;
};

// Runs forward + argmax peaks over every video's track of the given mode and
// scores the alignable sentences against their ground-truth windows.
EvalReport evaluate_model(const ModelParams& params, const Dataset& dataset, TrackMode mode,
                          const std::string& metric = "r_at_1", int jobs = 1);

// Builds the items evaluate_model scores, one per sentence, without a model:
// the caller supplies each track's K x T score matrix.
std::vector<EvalItem> items_from_scores(const VideoEntry& video, const TrackData& track,
                                        const AlignmentMatrix& scores);

std::string report_to_json(const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace stepalign
