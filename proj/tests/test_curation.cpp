#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stepalign/curation.hpp"
#include "stepalign/rng.hpp"
#include "stepalign/synthgen.hpp"
#include "stepalign/util.hpp"

using namespace stepalign;
namespace fs = std::filesystem;

namespace {

TextTrack narration_of(int n, const std::string& id = "v") {
  TextTrack t;
  t.video_id = id;
  t.mode = TrackMode::narration;
  for (int k = 0; k < n; ++k) {
    Sentence s;
    s.text = "sentence " + std::to_string(k);
    s.source_window = TimeWindow{k, k};
    t.sentences.push_back(s);
  }
  return t;
}

std::vector<int> segment_sizes(const std::vector<TranscriptSegment>& segs) {
  std::vector<int> out;
  for (const auto& s : segs) out.push_back(static_cast<int>(s.sentence_idx.size()));
  return out;
}

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("stepalign_cur_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("transcript segmentation sizes") {
  CHECK(segment_sizes(segment_transcript(narration_of(25))) == std::vector<int>{10, 10, 5});
  CHECK(segment_sizes(segment_transcript(narration_of(12))) == std::vector<int>{12});
  CHECK(segment_sizes(segment_transcript(narration_of(10))) == std::vector<int>{10});
  CHECK(segment_sizes(segment_transcript(narration_of(19))) == std::vector<int>{10, 9});
  CHECK(segment_sizes(segment_transcript(narration_of(11))) == std::vector<int>{11});
  CHECK(segment_sizes(segment_transcript(narration_of(30))) == std::vector<int>{10, 10, 10});
  CHECK(segment_transcript(narration_of(0)).empty());

  auto segs = segment_transcript(narration_of(25), 10);
  CHECK(segs[0].index == 1);
  CHECK(segs[2].index == 3);
  CHECK(segs[0].sentence_idx.front() == 0);
  CHECK(segs[2].sentence_idx.back() == 24);

  SUBCASE("step tracks are not segmentable") {
    TextTrack t = narration_of(5);
    t.mode = TrackMode::step;
    CHECK_THROWS_AS(segment_transcript(t), UsageError);
  }
  SUBCASE("target must be positive") {
    CHECK_THROWS_AS(segment_transcript(narration_of(5), 0), ConfigError);
  }
}

TEST_CASE("filler detection and discourse marker stripping") {
  CHECK(is_filler_sentence("hey guys welcome back to my channel"));
  CHECK(is_filler_sentence("please SUBSCRIBE and hit the bell"));
  CHECK(is_filler_sentence("Thanks for watching, see you next time"));
  CHECK_FALSE(is_filler_sentence("fold the towel in half"));
  CHECK_FALSE(is_filler_sentence("now sand the surface"));

  CHECK(strip_discourse_markers("so now you chop the onion") == "you chop the onion");
  CHECK(strip_discourse_markers("Then, mix the batter") == "mix the batter");
  CHECK(strip_discourse_markers("and then add salt") == "add salt");
  CHECK(strip_discourse_markers("OK well spread the glue") == "spread the glue");
  CHECK(strip_discourse_markers("nowhere to hide") == "nowhere to hide");
  CHECK(strip_discourse_markers("sandpaper the edge") == "sandpaper the edge");
  CHECK(strip_discourse_markers("  then   rinse  ") == "rinse");
  CHECK(strip_discourse_markers("then") == "then");  // marker alone is not stripped
}

TEST_CASE("mock summarizer keeps actions, drops chatter, dedupes") {
  SummarizerRequest req;
  req.segment_id = "v:1";
  req.sentences = {
      "hey guys welcome back to my channel",
      "so first you peel the carrots",
      "then you peel the carrots",  // dedupes to the same step after stripping
      "now dice them finely",
      "don't forget to like and comment",
      "dice them finely",  // exact duplicate after stripping
      "okay",              // strips to itself, kept (not filler, non-empty)
  };
  MockSummarizer mock;
  SummarizerResponse resp = mock.summarize_one(req);
  CHECK(resp.segment_id == "v:1");
  CHECK_FALSE(resp.failed);
  REQUIRE(resp.steps.size() == 4);
  CHECK(resp.steps[0] == "first you peel the carrots");
  CHECK(resp.steps[1] == "you peel the carrots");
  CHECK(resp.steps[2] == "dice them finely");
  CHECK(resp.steps[3] == "okay");

  SUBCASE("batched call is deterministic and ordered") {
    auto r1 = mock.summarize_batch({req, req});
    auto r2 = mock.summarize_batch({req, req});
    REQUIRE(r1.size() == 2);
    CHECK(r1[0].steps == r1[1].steps);
    CHECK(r1[0].steps == r2[0].steps);
  }
}

TEST_CASE("file protocol summarizer round trips through the exchange directory") {
  fs::path dir = temp_dir("proto");
  SummarizerRequest req;
  req.segment_id = "vid-1:1";
  req.prompt = "summarize";
  req.sentences = {"so you sand the board", "then paint it"};

  SUBCASE("manual exchange: responses already in place") {
    std::ofstream out(dir / "responses.jsonl");
    out << R"({"segment_id":"vid-1:1","steps":["sand the board","paint it"]})" << "\n";
    out.close();
    FileProtocolSummarizer summ(dir);
    auto resp = summ.summarize_batch({req});
    REQUIRE(resp.size() == 1);
    CHECK_FALSE(resp[0].failed);
    CHECK(resp[0].steps == std::vector<std::string>{"sand the board", "paint it"});
    // Requests were serialized for the operator.
    std::ifstream in(dir / "requests.jsonl");
    std::string line;
    std::getline(in, line);
    CHECK(line.find("\"vid-1:1\"") != std::string::npos);
    CHECK(line.find("sand the board") != std::string::npos);
  }
  SUBCASE("command is invoked with request and response paths") {
    fs::path script = dir / "summ.sh";
    {
      std::ofstream s(script);
      s << "#!/bin/sh\n"
        << "echo '{\"segment_id\":\"vid-1:1\",\"steps\":[\"from command\"]}' > \"$2\"\n";
    }
    fs::permissions(script, fs::perms::owner_all);
    FileProtocolSummarizer summ(dir, script.string());
    auto resp = summ.summarize_batch({req});
    REQUIRE(resp.size() == 1);
    CHECK(resp[0].steps == std::vector<std::string>{"from command"});
  }
  SUBCASE("nonzero exit is fatal") {
    FileProtocolSummarizer summ(dir, "false");
    CHECK_THROWS_AS(summ.summarize_batch({req}), PipelineError);
  }
  SUBCASE("missing segment becomes a failed response") {
    std::ofstream out(dir / "responses.jsonl");
    out << R"({"segment_id":"some-other:1","steps":["x"]})" << "\n";
    out.close();
    FileProtocolSummarizer summ(dir);
    auto resp = summ.summarize_batch({req});
    REQUIRE(resp.size() == 1);
    CHECK(resp[0].failed);
    CHECK(resp[0].steps.empty());
  }
}

TEST_CASE("text similarity matrix matches the frozen softmax rows") {
  Tensor step = Tensor::from_rows({{1.0, 0.0}, {0.0, 2.0}});
  Tensor narr = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}, {0.0, 0.0}});
  Tensor T_SN = text_similarity_matrix(step, narr, 1.0);
  REQUIRE(T_SN.rows() == 2);
  REQUIRE(T_SN.cols() == 3);
  // Logits row 0: (1, 0, 0) -> e/(e+2), 1/(e+2), 1/(e+2).
  CHECK(T_SN.at(0, 0) == doctest::Approx(0.5761).epsilon(1e-4));
  CHECK(T_SN.at(0, 1) == doctest::Approx(0.2119).epsilon(1e-4));
  CHECK(T_SN.at(0, 2) == doctest::Approx(0.2119).epsilon(1e-4));
  // Logits row 1: (0, 2, 0) -> 1/(2+e^2), e^2/(2+e^2), 1/(2+e^2).
  CHECK(T_SN.at(1, 0) == doctest::Approx(0.1065).epsilon(1e-3));
  CHECK(T_SN.at(1, 1) == doctest::Approx(0.7870).epsilon(1e-4));
  for (int s = 0; s < 2; ++s) {
    double sum = 0.0;
    for (int n = 0; n < 3; ++n) sum += T_SN.at(s, n);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(text_similarity_matrix(step, narr, 0.0), ConfigError);
}

TEST_CASE("label chaining is the matrix product") {
  Tensor T_SN = Tensor::from_rows({{0.5, 0.5}, {1.0, 0.0}});
  Tensor Y_NV = Tensor::from_rows({{1.0, 0.0, 0.0}, {0.0, 1.0, 1.0}});
  Tensor Y_SV = chain_labels(T_SN, Y_NV);
  CHECK(Y_SV.at(0, 0) == 0.5);
  CHECK(Y_SV.at(0, 1) == 0.5);
  CHECK(Y_SV.at(0, 2) == 0.5);
  CHECK(Y_SV.at(1, 0) == 1.0);
  CHECK(Y_SV.at(1, 2) == 0.0);
}

TEST_CASE("stage-1 windows: peak, expansion, and the discard rule") {
  Stage1Config cfg;  // zeta 0.7, eps1 0.20
  std::vector<std::string> texts = {"s"};

  SUBCASE("hand trace") {
    Tensor Y = Tensor::from_rows({{0.2, 0.7, 1.0, 0.8, 0.3}});
    auto recs = stage1_windows(Y, texts, "v", cfg);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].window == TimeWindow{1, 3});
    CHECK(recs[0].score == 1.0);
    CHECK_FALSE(recs[0].discarded);
    CHECK(recs[0].provenance == Provenance::stage1);
    CHECK(recs[0].video_id == "v");
    CHECK(recs[0].step_text == "s");
  }
  SUBCASE("tied peak resolves to the earliest timestamp") {
    Tensor Y = Tensor::from_rows({{0.1, 0.9, 0.9, 0.1}});
    auto recs = stage1_windows(Y, texts, "v", cfg);
    CHECK(recs[0].window == TimeWindow{1, 2});
  }
  SUBCASE("sub-threshold peak is discarded but still windowed") {
    Tensor Y = Tensor::from_rows({{0.05, 0.1, 0.05}});
    auto recs = stage1_windows(Y, texts, "v", cfg);
    CHECK(recs[0].discarded);
    CHECK(recs[0].score == 0.1);
    CHECK(recs[0].window == TimeWindow{1, 1});
  }
  SUBCASE("expansion is inclusive at exactly zeta * peak") {
    Tensor Y = Tensor::from_rows({{0.7, 1.0, 0.69999}});
    auto recs = stage1_windows(Y, texts, "v", cfg);
    CHECK(recs[0].window == TimeWindow{0, 1});
  }
  SUBCASE("constant row expands across the whole timeline") {
    Tensor Y = Tensor::from_rows({{0.5, 0.5, 0.5, 0.5}});
    auto recs = stage1_windows(Y, texts, "v", cfg);
    CHECK(recs[0].window == TimeWindow{0, 3});
  }
  SUBCASE("texts must match rows") {
    Tensor Y = Tensor::from_rows({{0.5, 0.5}, {0.1, 0.2}});
    CHECK_THROWS_AS(stage1_windows(Y, texts, "v", cfg), ShapeError);
  }
}

TEST_CASE("stage-1 config validation") {
  Stage1Config cfg;
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("nu") {
    cfg.nu = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("zeta") {
    cfg.zeta = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("eps1") {
    cfg.eps1 = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("stage 1 over a planted dataset chains steps onto their windows") {
  SynthConfig sc;
  sc.n_videos = 5;
  sc.T_min = 20;
  sc.T_max = 28;
  sc.C = 12;
  sc.steps_min = 2;
  sc.steps_max = 4;
  sc.noise_sigma = 0.02;
  sc.alignable_frac = 1.0;  // every narration is usable
  sc.seed = 17;
  Dataset ds = generate(sc);

  Stage1Config cfg;
  StepSet steps = run_stage1(ds, StepSource::synth_track, nullptr, "", cfg);
  REQUIRE(steps.videos.size() == 5);
  int kept = 0, total = 0;
  for (std::size_t v = 0; v < steps.videos.size(); ++v) {
    const VideoSteps& vs = steps.videos[v];
    CHECK(vs.video_id == ds.videos[v].id);
    REQUIRE(vs.records.size() == vs.texts.size());
    const TrackData* truth = ds.videos[v].track_by_mode(TrackMode::step);
    REQUIRE(truth != nullptr);
    REQUIRE(vs.records.size() == truth->track.sentences.size());
    for (std::size_t k = 0; k < vs.records.size(); ++k) {
      total += 1;
      if (vs.records[k].discarded) continue;
      kept += 1;
      // At near-zero noise with all-alignable narrations, the chained window
      // must overlap the true one.
      TimeWindow truth_w = *truth->track.sentences[k].source_window;
      const TimeWindow& got = vs.records[k].window;
      CHECK(got.start <= truth_w.end);
      CHECK(got.end >= truth_w.start);
    }
  }
  CHECK(kept > total / 2);

  SUBCASE("summarizer source demands a summarizer") {
    CHECK_THROWS_AS(run_stage1(ds, StepSource::summarizer, nullptr, "", cfg), UsageError);
  }
}

TEST_CASE("stage 1 with the mock summarizer sources features from matching narrations") {
  // One video, constant features, narrations with known texts.
  VideoEntry v;
  v.id = "vid-0";
  v.duration_s = 9;
  Tensor frames = Tensor::zeros(9, 3);
  for (int t = 0; t < 9; ++t) frames.at(t, t % 3) = 1.0;
  v.features = FeatureSequence{"vid-0", FeatureKind::video, frames};

  TrackData narr;
  narr.track.video_id = "vid-0";
  narr.track.mode = TrackMode::narration;
  std::vector<std::string> texts = {
      "hey guys welcome back to my channel",  // filler, contributes nothing
      "so you flatten the clay",
      "then you score both pieces",
      "thanks for watching",  // filler
  };
  for (int k = 0; k < 4; ++k) {
    Sentence s;
    s.text = texts[static_cast<size_t>(k)];
    s.source_window = TimeWindow{k * 2, k * 2 + 1};
    narr.track.sentences.push_back(s);
  }
  Tensor nf = Tensor::zeros(4, 3);
  nf.at(1, 0) = 0.25;
  nf.at(2, 1) = -0.5;
  narr.features = FeatureSequence{"vid-0", FeatureKind::text, nf};
  v.tracks.push_back(narr);
  Dataset ds;
  ds.videos.push_back(v);

  MockSummarizer mock;
  Stage1Config cfg;
  StepSet steps = run_stage1(ds, StepSource::summarizer, &mock, "prompt", cfg);
  REQUIRE(steps.videos.size() == 1);
  const VideoSteps& vs = steps.videos[0];
  REQUIRE(vs.texts.size() == 2);
  CHECK(vs.texts[0] == "you flatten the clay");
  CHECK(vs.texts[1] == "you score both pieces");
  // Feature rows are the source narrations' rows.
  CHECK(vs.features.at(0, 0) == 0.25);
  CHECK(vs.features.at(1, 1) == -0.5);
  CHECK(vs.records.size() == 2);
}

TEST_CASE("stage-2 threshold re-application and config validation") {
  std::vector<StepRecord> records(3);
  records[0].score = 0.9;
  records[1].score = 0.5;
  records[2].score = 0.79;
  auto out = apply_stage2_threshold(records, 0.8);
  CHECK_FALSE(out[0].discarded);
  CHECK(out[1].discarded);
  CHECK(out[2].discarded);

  // eps2 above 1 discards everything, even perfect cosines.
  auto none = apply_stage2_threshold(records, 1.01);
  CHECK(none[0].discarded);

  Stage2Config cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.delta_sec = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = Stage2Config{};
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK(position_from_string("start") == Stage2Config::Position::start);
  CHECK(position_from_string("center") == Stage2Config::Position::center);
  CHECK_THROWS_AS(position_from_string("middle"), ConfigError);
}

TEST_CASE("stage 2 trains on survivors and re-infers every step") {
  SynthConfig sc;
  sc.n_videos = 6;
  sc.T_min = 18;
  sc.T_max = 24;
  sc.C = 8;
  sc.steps_min = 2;
  sc.steps_max = 3;
  sc.noise_sigma = 0.05;
  sc.alignable_frac = 1.0;
  sc.seed = 23;
  Dataset ds = generate(sc);

  Stage1Config s1;
  StepSet stage1 = run_stage1(ds, StepSource::synth_track, nullptr, "", s1);

  ModelConfig mc;
  mc.C_v = 8;
  mc.C_t = 8;
  mc.D = 8;
  mc.d = 4;
  mc.n_enc_layers = 1;
  mc.n_dec_layers = 1;
  mc.n_heads = 2;
  mc.max_T = 32;
  mc.max_K = 8;
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 3;
  tc.seed = 5;

  Stage2Config s2;
  s2.eps2 = -2.0;  // below any cosine: keep everything, thresholding is tested separately
  Stage2Result result = stage2_refine(ds, stage1, mc, tc, s2);

  REQUIRE(result.steps.videos.size() == stage1.videos.size());
  for (std::size_t v = 0; v < stage1.videos.size(); ++v) {
    const VideoSteps& before = stage1.videos[v];
    const VideoSteps& after = result.steps.videos[v];
    // Recycling: every generated step is re-scored, discarded ones included.
    REQUIRE(after.records.size() == before.records.size());
    int T = ds.videos[v].duration_s;
    for (const auto& rec : after.records) {
      CHECK(rec.provenance == Provenance::stage2);
      CHECK_FALSE(rec.discarded);
      CHECK(rec.window.length() <= s2.delta_sec);
      CHECK(rec.window.start >= 0);
      CHECK(rec.window.end <= T - 1);
    }
  }
  CHECK(static_cast<int>(result.training.curve.size()) == tc.epochs);

  SUBCASE("center position derives the window from the score row") {
    Stage2Config center = s2;
    center.position = Stage2Config::Position::center;
    Stage2Result r2 = stage2_refine(ds, stage1, mc, tc, center);
    bool any_wider = false;
    for (const auto& vs : r2.steps.videos)
      for (const auto& rec : vs.records) {
        CHECK(rec.window.contains(rec.window.start));
        any_wider = any_wider || rec.window.length() > 1;
      }
    CHECK(any_wider);
  }
  SUBCASE("survivor sets shrink as eps2 rises") {
    auto flat = flatten(result.steps);
    int kept_low = 0, kept_high = 0;
    for (const auto& r : apply_stage2_threshold(flat, 0.1)) kept_low += r.discarded ? 0 : 1;
    for (const auto& r : apply_stage2_threshold(flat, 0.6)) kept_high += r.discarded ? 0 : 1;
    CHECK(kept_high <= kept_low);
  }
  SUBCASE("refinement with nothing surviving stage 1 is fatal") {
    StepSet empty = stage1;
    for (auto& vs : empty.videos)
      for (auto& r : vs.records) r.discarded = true;
    CHECK_THROWS_AS(stage2_refine(ds, empty, mc, tc, s2), PipelineError);
  }
}

TEST_CASE("flatten preserves per-video order") {
  StepSet set;
  VideoSteps a;
  a.video_id = "a";
  a.records.resize(2);
  a.records[0].step_text = "a0";
  a.records[1].step_text = "a1";
  VideoSteps b;
  b.video_id = "b";
  b.records.resize(1);
  b.records[0].step_text = "b0";
  set.videos = {a, b};
  auto flat = flatten(set);
  REQUIRE(flat.size() == 3);
  CHECK(flat[0].step_text == "a0");
  CHECK(flat[2].step_text == "b0");
}
