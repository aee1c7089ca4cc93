#include "stepalign/evaluation.hpp"

#include <map>

#include <json.hpp>

#include "stepalign/util.hpp"

namespace stepalign {

using nlohmann::json;

double recall_at_1(const std::vector<EvalItem>& items) {
  int alignable = 0, recalled = 0;
  for (const auto& it : items) {
    if (!it.alignable) continue;
    if (!it.gt_window)
      throw ValidationError("recall_at_1: alignable item in " + it.video_id +
                            " lacks a ground-truth window");
    alignable += 1;
    if (it.gt_window->contains(it.predicted_peak)) recalled += 1;
  }
  if (alignable == 0) throw MetricError("recall_at_1: no alignable sentences to score");
  return static_cast<double>(recalled) / alignable;
}

double avg_recall_at_1(const std::vector<EvalItem>& items) {
  std::map<std::string, std::vector<EvalItem>> by_task;
  for (const auto& it : items) {
    if (!it.task_id) throw UsageError("avg_recall_at_1: item in " + it.video_id + " has no task_id");
    by_task[*it.task_id].push_back(it);
  }
  double sum = 0.0;
  int scored = 0;
  for (const auto& [task, group] : by_task) {
    bool any_alignable = false;
    for (const auto& it : group) any_alignable = any_alignable || it.alignable;
    if (!any_alignable) {
      log_info("avg_recall_at_1: task " + task + " has no alignable steps, excluded");
      continue;
    }
    sum += recall_at_1(group);
    scored += 1;
  }
  if (scored == 0) throw MetricError("avg_recall_at_1: no task with alignable steps");
  return sum / scored;
}

std::vector<EvalItem> items_from_scores(const VideoEntry& video, const TrackData& track,
                                        const AlignmentMatrix& scores) {
  if (scores.K() != static_cast<int>(track.track.sentences.size()))
    throw ShapeError("items_from_scores: " + std::to_string(scores.K()) + " score rows for " +
                     std::to_string(track.track.sentences.size()) + " sentences");
  std::vector<PredictedWindow> peaks = predict_windows(scores, WindowRule::argmax_only);
  std::vector<EvalItem> items;
  items.reserve(track.track.sentences.size());
  for (std::size_t k = 0; k < track.track.sentences.size(); ++k) {
    const Sentence& s = track.track.sentences[k];
    EvalItem item;
    item.video_id = video.id;
    item.task_id = video.task_id;
    item.alignable = s.is_alignable();
    item.gt_window = s.source_window;
    item.predicted_peak = peaks[k].peak_t;
    items.push_back(std::move(item));
  }
  return items;
}

EvalReport evaluate_model(const ModelParams& params, const Dataset& dataset, TrackMode mode,
                          const std::string& metric, int jobs) {
  if (metric != "r_at_1" && metric != "avg_r_at_1")
    throw ConfigError("evaluate_model: unknown metric '" + metric + "'");
  int n = static_cast<int>(dataset.videos.size());
  std::vector<std::vector<EvalItem>> per_video_items(static_cast<std::size_t>(n));
  parallel_for(n, jobs, [&](int i) {
    const VideoEntry& video = dataset.videos[static_cast<std::size_t>(i)];
    const TrackData* track = video.track_by_mode(mode);
    if (track == nullptr) {
      log_info("video " + video.id + ": no " + std::string(to_string(mode)) +
               " track, skipped in evaluation");
      return;
    }
    NoGradGuard no_grad;
    ForwardResult fwd = forward(video.features.rows, track->features.rows, mode, params);
    per_video_items[static_cast<std::size_t>(i)] = items_from_scores(video, *track, fwd.A);
  });

  EvalReport report;
  report.metric = metric;
  std::vector<EvalItem> all;
  for (int i = 0; i < n; ++i) {
    const auto& items = per_video_items[static_cast<std::size_t>(i)];
    if (items.empty()) continue;
    VideoEval ve;
    ve.video_id = dataset.videos[static_cast<std::size_t>(i)].id;
    for (const auto& it : items) {
      if (!it.alignable) continue;
      ve.n_alignable += 1;
      if (it.gt_window->contains(it.predicted_peak)) ve.n_recalled += 1;
    }
    report.per_video.push_back(ve);
    report.n_sentences += ve.n_alignable;
    all.insert(all.end(), items.begin(), items.end());
  }
  if (metric == "r_at_1") {
    report.value = recall_at_1(all);
  } else {
    report.value = avg_recall_at_1(all);
    std::map<std::string, bool> tasks;
    for (const auto& it : all)
      if (it.task_id && it.alignable) tasks[*it.task_id] = true;
    report.n_tasks = static_cast<int>(tasks.size());
  }
  return report;
}

std::string report_to_json(const EvalReport& report) {
  json j;
  j["metric"] = report.metric;
  j["value"] = report.value;
  j["n_sentences"] = report.n_sentences;
  if (report.n_tasks) j["n_tasks"] = *report.n_tasks;
  json per_video = json::array();
  for (const auto& v : report.per_video) {
    json e;
    e["video_id"] = v.video_id;
    e["n_alignable"] = v.n_alignable;
    e["n_recalled"] = v.n_recalled;
    per_video.push_back(e);
  }
  j["per_video"] = per_video;
  return j.dump(2) + "\n";
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  atomic_write_file(path, report_to_json(report));
}

}  // namespace stepalign
