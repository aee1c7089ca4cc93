#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "stepalign/curation.hpp"
#include "stepalign/synthgen.hpp"
#include "stepalign/util.hpp"

using namespace stepalign;

namespace {

SynthConfig small() {
  SynthConfig cfg;
  cfg.n_videos = 8;
  cfg.T_min = 20;
  cfg.T_max = 30;
  cfg.C = 10;
  cfg.steps_min = 3;
  cfg.steps_max = 5;
  cfg.noise_sigma = 0.1;
  cfg.alignable_frac = 0.5;
  cfg.jitter_s = 0;
  cfg.n_tasks = 3;
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("generator config validation") {
  SynthConfig cfg = small();
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("timeline must fit the widest tiling") {
    cfg.T_min = 9;  // 2 * steps_max = 10
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("step range ordered") {
    cfg.steps_min = 6;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("alignable_frac in range") {
    cfg.alignable_frac = 1.2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("negative jitter") {
    cfg.jitter_s = -1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("generation is deterministic and shaped to spec") {
  SynthConfig cfg = small();
  Dataset a = generate(cfg);
  Dataset b = generate(cfg);
  REQUIRE(a.videos.size() == 8);
  REQUIRE(b.videos.size() == 8);

  for (std::size_t v = 0; v < a.videos.size(); ++v) {
    const VideoEntry& va = a.videos[v];
    const VideoEntry& vb = b.videos[v];
    CHECK(va.id == vb.id);
    CHECK(va.features.rows.data() == vb.features.rows.data());

    CHECK(va.duration_s >= cfg.T_min);
    CHECK(va.duration_s <= cfg.T_max);
    CHECK(va.features.length() == va.duration_s);
    CHECK(va.features.dim() == cfg.C);
    REQUIRE(va.task_id.has_value());
    CHECK(va.task_id->rfind("task-", 0) == 0);

    const TrackData* narr = va.track_by_mode(TrackMode::narration);
    const TrackData* step = va.track_by_mode(TrackMode::step);
    REQUIRE(narr != nullptr);
    REQUIRE(step != nullptr);
    int K = static_cast<int>(step->track.sentences.size());
    CHECK(K >= cfg.steps_min);
    CHECK(K <= cfg.steps_max);
    CHECK(static_cast<int>(narr->track.sentences.size()) == K);
    CHECK(narr->features.length() == K);
    CHECK(step->features.dim() == cfg.C);

    // Step windows tile [0, T-1]: contiguous, each at least 2 s wide.
    int cursor = 0;
    for (const auto& s : step->track.sentences) {
      REQUIRE(s.source_window.has_value());
      CHECK(s.source_window->start == cursor);
      CHECK(s.source_window->length() >= 2);
      CHECK(s.is_alignable());
      cursor = s.source_window->end + 1;
    }
    CHECK(cursor == va.duration_s);
    CHECK_NOTHROW(narr->track.validate());
  }
}

TEST_CASE("narration alignability mirrors the planted flags") {
  SynthConfig cfg = small();
  SUBCASE("all alignable") {
    cfg.alignable_frac = 1.0;
    Dataset ds = generate(cfg);
    for (const auto& v : ds.videos)
      for (const auto& s : v.track_by_mode(TrackMode::narration)->track.sentences) {
        CHECK(s.is_alignable());
        CHECK_FALSE(is_filler_sentence(s.text));
      }
  }
  SUBCASE("none alignable") {
    cfg.alignable_frac = 0.0;
    Dataset ds = generate(cfg);
    for (const auto& v : ds.videos)
      for (const auto& s : v.track_by_mode(TrackMode::narration)->track.sentences) {
        CHECK_FALSE(s.is_alignable());
        CHECK(is_filler_sentence(s.text));
        CHECK(s.source_window.has_value());  // fillers still carry a window
      }
  }
  SUBCASE("mixed fraction lands between") {
    cfg.alignable_frac = 0.5;
    cfg.n_videos = 40;
    Dataset ds = generate(cfg);
    int yes = 0, total = 0;
    for (const auto& v : ds.videos)
      for (const auto& s : v.track_by_mode(TrackMode::narration)->track.sentences) {
        total += 1;
        yes += s.is_alignable() ? 1 : 0;
      }
    double frac = double(yes) / total;
    CHECK(frac > 0.3);
    CHECK(frac < 0.7);
  }
}

TEST_CASE("jitter drifts narration windows by at most jitter_s per boundary") {
  SynthConfig cfg = small();
  cfg.jitter_s = 3;
  cfg.n_videos = 20;
  Dataset ds = generate(cfg);
  bool any_moved = false;
  for (const auto& v : ds.videos) {
    const auto& narr = v.track_by_mode(TrackMode::narration)->track.sentences;
    const auto& step = v.track_by_mode(TrackMode::step)->track.sentences;
    REQUIRE(narr.size() == step.size());
    int prev_start = 0;
    for (std::size_t k = 0; k < narr.size(); ++k) {
      TimeWindow truth = *step[k].source_window;
      TimeWindow moved = *narr[k].source_window;
      CHECK(std::abs(moved.start - truth.start) <= cfg.jitter_s);
      CHECK(std::abs(moved.end - truth.end) <= cfg.jitter_s);
      CHECK(moved.start >= 0);
      CHECK(moved.end <= v.duration_s - 1);
      CHECK(moved.start >= prev_start);
      prev_start = moved.start;
      any_moved = any_moved || !(moved == truth);
    }
  }
  CHECK(any_moved);
}

TEST_CASE("different seeds and different video indices give different data") {
  SynthConfig cfg = small();
  Dataset a = generate(cfg);
  cfg.seed = 100;
  Dataset b = generate(cfg);
  CHECK(a.videos[0].features.rows.data() != b.videos[0].features.rows.data());
  CHECK(a.videos[0].features.rows.data() != a.videos[1].features.rows.data());
}

TEST_CASE("oracle recall tracks the planted signal strength") {
  SynthConfig cfg = small();
  cfg.alignable_frac = 1.0;
  cfg.n_videos = 12;

  cfg.noise_sigma = 0.0;
  CHECK(oracle_recall(generate(cfg)) == 1.0);

  cfg.noise_sigma = 0.1;
  double mild = oracle_recall(generate(cfg));
  CHECK(mild > 0.85);

  cfg.noise_sigma = 30.0;
  double drowned = oracle_recall(generate(cfg));
  CHECK(drowned < 0.6);
  CHECK(mild >= drowned);
}
