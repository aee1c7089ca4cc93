#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stepalign/evaluation.hpp"
#include "stepalign/rng.hpp"
#include "stepalign/synthgen.hpp"
#include "stepalign/util.hpp"

using namespace stepalign;
namespace fs = std::filesystem;

namespace {

EvalItem item(bool alignable, int start, int end, int peak, const std::string& task = "") {
  EvalItem it;
  it.video_id = "v";
  if (!task.empty()) it.task_id = task;
  it.alignable = alignable;
  if (alignable) it.gt_window = TimeWindow{start, end};
  it.predicted_peak = peak;
  return it;
}

}  // namespace

TEST_CASE("recall counts inclusive window hits over alignable items only") {
  std::vector<EvalItem> items = {
      item(true, 2, 5, 2),    // boundary hit (start)
      item(true, 2, 5, 5),    // boundary hit (end)
      item(true, 2, 5, 6),    // miss
      item(true, 0, 0, 0),    // single-second window hit
      item(false, 0, 0, 99),  // unalignable: ignored entirely
  };
  CHECK(recall_at_1(items) == doctest::Approx(0.75));

  SUBCASE("no alignable items is an error, not a zero") {
    std::vector<EvalItem> none = {item(false, 0, 0, 0)};
    CHECK_THROWS_AS(recall_at_1(none), MetricError);
    CHECK_THROWS_AS(recall_at_1({}), MetricError);
  }
  SUBCASE("alignable without a window is malformed") {
    EvalItem bad;
    bad.alignable = true;
    bad.predicted_peak = 0;
    CHECK_THROWS_AS(recall_at_1({bad}), ValidationError);
  }
}

TEST_CASE("task-averaged recall is the unweighted task mean") {
  // Task a: 2/3, task b: 1/2, task c: 1/4; mean = 0.472222.
  std::vector<EvalItem> items;
  for (int i = 0; i < 3; ++i) items.push_back(item(true, 0, 1, i == 2 ? 5 : 0, "a"));
  for (int i = 0; i < 2; ++i) items.push_back(item(true, 0, 1, i == 1 ? 5 : 0, "b"));
  for (int i = 0; i < 4; ++i) items.push_back(item(true, 0, 1, i > 0 ? 5 : 0, "c"));
  CHECK(avg_recall_at_1(items) == doctest::Approx(0.4722).epsilon(1e-4));

  SUBCASE("every item needs a task id") {
    items.push_back(item(true, 0, 1, 0));
    CHECK_THROWS_AS(avg_recall_at_1(items), UsageError);
  }
  SUBCASE("tasks with no alignable items are skipped") {
    items.push_back(item(false, 0, 0, 0, "d"));
    CHECK(avg_recall_at_1(items) == doctest::Approx(0.4722).epsilon(1e-4));
  }
  SUBCASE("all tasks empty is an error") {
    std::vector<EvalItem> none = {item(false, 0, 0, 0, "d")};
    CHECK_THROWS_AS(avg_recall_at_1(none), MetricError);
  }
}

TEST_CASE("items built from a score matrix take the earliest argmax as the peak") {
  VideoEntry v;
  v.id = "vid";
  v.task_id = "task-3";
  v.duration_s = 4;
  v.features = FeatureSequence{"vid", FeatureKind::video, Tensor::zeros(4, 2)};
  TrackData td;
  td.track.video_id = "vid";
  td.track.mode = TrackMode::step;
  Sentence s0;
  s0.text = "a";
  s0.source_window = TimeWindow{1, 2};
  Sentence s1;
  s1.text = "b";
  s1.alignable = false;
  td.track.sentences = {s0, s1};
  td.features = FeatureSequence{"vid", FeatureKind::text, Tensor::zeros(2, 2)};

  AlignmentMatrix scores;
  scores.kind = MatrixKind::predicted_score;
  scores.values = Tensor::from_rows({{0.3, 0.9, 0.9, 0.1}, {0.2, 0.2, 0.2, 0.2}});

  auto items = items_from_scores(v, td, scores);
  REQUIRE(items.size() == 2);
  CHECK(items[0].predicted_peak == 1);
  CHECK(items[0].alignable);
  CHECK(items[0].gt_window == TimeWindow{1, 2});
  CHECK(items[0].task_id == std::optional<std::string>("task-3"));
  CHECK_FALSE(items[1].alignable);
  CHECK(recall_at_1(items) == 1.0);

  SUBCASE("row count must match the track") {
    scores.values = Tensor::from_rows({{0.1, 0.2, 0.3, 0.4}});
    CHECK_THROWS_AS(items_from_scores(v, td, scores), ShapeError);
  }
}

TEST_CASE("perfect scores give recall exactly 1.0 through the whole path") {
  // Scores equal to the ground-truth mask peak inside every window.
  SynthConfig sc;
  sc.n_videos = 4;
  sc.T_min = 16;
  sc.T_max = 20;
  sc.C = 6;
  sc.steps_min = 2;
  sc.steps_max = 3;
  sc.noise_sigma = 0.0;
  sc.alignable_frac = 1.0;
  sc.seed = 2;
  Dataset ds = generate(sc);
  std::vector<EvalItem> items;
  for (const auto& video : ds.videos) {
    const TrackData* td = video.track_by_mode(TrackMode::step);
    REQUIRE(td != nullptr);
    AlignmentMatrix gt = gt_matrix_from_windows(td->track, video.duration_s);
    AlignmentMatrix as_scores;
    as_scores.kind = MatrixKind::predicted_score;
    as_scores.values = gt.values;
    auto vi = items_from_scores(video, *td, as_scores);
    items.insert(items.end(), vi.begin(), vi.end());
  }
  CHECK(recall_at_1(items) == 1.0);
}

TEST_CASE("evaluate_model produces a full report on a tiny model") {
  SynthConfig sc;
  sc.n_videos = 3;
  sc.T_min = 16;
  sc.T_max = 20;
  sc.C = 6;
  sc.steps_min = 2;
  sc.steps_max = 3;
  sc.noise_sigma = 0.1;
  sc.alignable_frac = 1.0;
  sc.seed = 4;
  Dataset ds = generate(sc);

  ModelConfig mc;
  mc.C_v = 6;
  mc.C_t = 6;
  mc.D = 8;
  mc.d = 4;
  mc.n_enc_layers = 1;
  mc.n_dec_layers = 1;
  mc.n_heads = 2;
  mc.max_T = 32;
  mc.max_K = 8;
  Rng rng(1);
  ModelParams params = ModelParams::init(mc, rng);

  EvalReport report = evaluate_model(params, ds, TrackMode::step, "r_at_1", 2);
  CHECK(report.metric == "r_at_1");
  CHECK(report.per_video.size() == 3);
  CHECK(report.n_sentences >= 6);
  CHECK_FALSE(report.n_tasks.has_value());
  CHECK(report.value >= 0.0);
  CHECK(report.value <= 1.0);
  int recalled = 0, alignable = 0;
  for (const auto& pv : report.per_video) {
    recalled += pv.n_recalled;
    alignable += pv.n_alignable;
  }
  CHECK(report.value == doctest::Approx(double(recalled) / alignable));

  SUBCASE("task-averaged metric fills n_tasks") {
    EvalReport avg = evaluate_model(params, ds, TrackMode::step, "avg_r_at_1");
    REQUIRE(avg.n_tasks.has_value());
    CHECK(*avg.n_tasks >= 1);
    CHECK(*avg.n_tasks <= 4);
  }
  SUBCASE("unknown metric") {
    CHECK_THROWS_AS(evaluate_model(params, ds, TrackMode::step, "recall@5"), ConfigError);
  }
  SUBCASE("identical runs serialize identically") {
    EvalReport again = evaluate_model(params, ds, TrackMode::step, "r_at_1", 2);
    CHECK(report_to_json(report) == report_to_json(again));
  }
}

TEST_CASE("report json is frozen and written atomically") {
  EvalReport r;
  r.metric = "r_at_1";
  r.value = 0.5;
  r.n_sentences = 2;
  VideoEval pv;
  pv.video_id = "vid-0";
  pv.n_alignable = 2;
  pv.n_recalled = 1;
  r.per_video.push_back(pv);

  std::string expect =
      "{\n"
      "  \"metric\": \"r_at_1\",\n"
      "  \"n_sentences\": 2,\n"
      "  \"per_video\": [\n"
      "    {\n"
      "      \"n_alignable\": 2,\n"
      "      \"n_recalled\": 1,\n"
      "      \"video_id\": \"vid-0\"\n"
      "    }\n"
      "  ],\n"
      "  \"value\": 0.5\n"
      "}\n";
  CHECK(report_to_json(r) == expect);

  fs::path path = fs::temp_directory_path() / "stepalign_report.json";
  write_report(path, r);
  std::ifstream in(path);
  std::string got((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(got == expect);
}
