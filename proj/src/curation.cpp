#include "stepalign/curation.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "stepalign/util.hpp"

namespace stepalign {

namespace fs = std::filesystem;
using nlohmann::json;

void Stage1Config::validate() const {
  if (nu <= 0.0) throw ConfigError("stage1: nu must be positive");
  if (zeta <= 0.0 || zeta > 1.0) throw ConfigError("stage1: zeta must be in (0, 1]");
  if (eps1 < 0.0 || eps1 > 1.0) throw ConfigError("stage1: eps1 must be in [0, 1]");
  if (segment_target < 1) throw ConfigError("stage1: segment_target must be >= 1");
}

void Stage2Config::validate() const {
  if (delta_sec < 1) throw ConfigError("stage2: delta_sec must be >= 1");
  if (iterations < 1) throw ConfigError("stage2: iterations must be >= 1");
  if (zeta <= 0.0 || zeta > 1.0) throw ConfigError("stage2: zeta must be in (0, 1]");
}

Stage2Config::Position position_from_string(const std::string& s) {
  if (s == "start") return Stage2Config::Position::start;
  if (s == "center") return Stage2Config::Position::center;
  throw ConfigError("unknown window position '" + s + "' (want start|center)");
}

const char* to_string(Stage2Config::Position p) {
  return p == Stage2Config::Position::start ? "start" : "center";
}

std::vector<TranscriptSegment> segment_transcript(const TextTrack& narration, int target) {
  if (narration.mode != TrackMode::narration)
    throw UsageError("segment_transcript: track is not narration");
  if (target < 1) throw ConfigError("segment_transcript: target must be >= 1");
  int n = static_cast<int>(narration.sentences.size());
  std::vector<TranscriptSegment> segments;
  for (int begin = 0; begin < n; begin += target) {
    TranscriptSegment seg;
    seg.video_id = narration.video_id;
    seg.index = static_cast<int>(segments.size()) + 1;
    int end = std::min(begin + target, n);
    for (int i = begin; i < end; ++i) seg.sentence_idx.push_back(i);
    segments.push_back(std::move(seg));
  }
  // A short trailing chunk (< target/2) is merged into its predecessor.
  if (segments.size() >= 2 &&
      2 * static_cast<int>(segments.back().sentence_idx.size()) < target) {
    auto tail = std::move(segments.back());
    segments.pop_back();
    auto& prev = segments.back().sentence_idx;
    prev.insert(prev.end(), tail.sentence_idx.begin(), tail.sentence_idx.end());
  }
  return segments;
}

// --- mock summarizer -----------------------------------------------------------

namespace {

std::string to_lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

const char* kFillerPhrases[] = {
    "hey guys",      "welcome back",          "welcome to",    "subscribe",
    "like and",      "thanks for watching",   "thank you for watching",
    "hello everyone", "hi everyone",          "hit the bell",  "see you next",
    "my channel",    "don't forget to",
};

const char* kDiscourseMarkers[] = {
    "so", "now", "then", "okay", "ok", "well", "and", "alright", "next",
};

}  // namespace

bool is_filler_sentence(const std::string& text) {
  std::string low = to_lower(text);
  for (const char* phrase : kFillerPhrases)
    if (low.find(phrase) != std::string::npos) return true;
  return false;
}

std::string strip_discourse_markers(const std::string& text) {
  std::string s = trim(text);
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    std::string low = to_lower(s);
    for (const char* marker : kDiscourseMarkers) {
      std::size_t len = std::strlen(marker);
      if (low.size() <= len || low.compare(0, len, marker) != 0) continue;
      char next = low[len];
      if (next != ' ' && next != ',') continue;
      s = s.substr(len);
      std::size_t skip = s.find_first_not_of(" ,");
      s = skip == std::string::npos ? "" : s.substr(skip);
      changed = true;
      break;
    }
  }
  return s;
}

SummarizerResponse MockSummarizer::summarize_one(const SummarizerRequest& request) const {
  SummarizerResponse resp;
  resp.segment_id = request.segment_id;
  std::set<std::string> seen;
  for (const auto& sentence : request.sentences) {
    if (is_filler_sentence(sentence)) continue;
    std::string step = strip_discourse_markers(sentence);
    if (step.empty()) continue;
    if (!seen.insert(step).second) continue;
    resp.steps.push_back(std::move(step));
  }
  return resp;
}

std::vector<SummarizerResponse> MockSummarizer::summarize_batch(
    const std::vector<SummarizerRequest>& requests) {
  std::vector<SummarizerResponse> out;
  out.reserve(requests.size());
  for (const auto& r : requests) out.push_back(summarize_one(r));
  return out;
}

// --- file protocol summarizer -----------------------------------------------------

FileProtocolSummarizer::FileProtocolSummarizer(fs::path dir, std::string command)
    : dir_(std::move(dir)), command_(std::move(command)) {}

std::vector<SummarizerResponse> FileProtocolSummarizer::summarize_batch(
    const std::vector<SummarizerRequest>& requests) {
  fs::create_directories(dir_);
  fs::path req_path = dir_ / "requests.jsonl";
  fs::path resp_path = dir_ / "responses.jsonl";
  {
    std::ofstream out(req_path, std::ios::trunc);
    if (!out) throw LoadError("cannot write " + req_path.string());
    for (const auto& r : requests) {
      json j;
      j["segment_id"] = r.segment_id;
      j["prompt"] = r.prompt;
      j["sentences"] = r.sentences;
      out << j.dump() << '\n';
    }
  }
  if (!command_.empty()) {
    std::string cmd = command_ + " " + req_path.string() + " " + resp_path.string();
    int rc = std::system(cmd.c_str());
    if (rc != 0)
      throw PipelineError("summarizer command failed with status " + std::to_string(rc) + ": " +
                          cmd);
  }
  std::ifstream in(resp_path);
  if (!in) throw LoadError("cannot open " + resp_path.string());
  std::unordered_map<std::string, SummarizerResponse> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw LoadError(resp_path.string() + ":" + std::to_string(line_no) + ": malformed JSON");
    try {
      SummarizerResponse r;
      r.segment_id = j.at("segment_id").get<std::string>();
      for (const auto& s : j.at("steps")) r.steps.push_back(s.get<std::string>());
      by_id[r.segment_id] = std::move(r);
    } catch (const json::exception& e) {
      throw LoadError(resp_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<SummarizerResponse> out;
  out.reserve(requests.size());
  for (const auto& r : requests) {
    auto it = by_id.find(r.segment_id);
    if (it == by_id.end()) {
      SummarizerResponse failed;
      failed.segment_id = r.segment_id;
      failed.failed = true;
      log_error("summarizer gave no response for segment " + r.segment_id);
      out.push_back(std::move(failed));
    } else {
      out.push_back(it->second);
    }
  }
  return out;
}

// --- stage 1 -----------------------------------------------------------------------

Tensor text_similarity_matrix(const Tensor& step_feats, const Tensor& narr_feats, double nu) {
  if (nu <= 0.0) throw ConfigError("text_similarity_matrix: nu must be positive");
  return softmax(scale(matmul(step_feats, transpose(narr_feats)), 1.0 / nu), /*axis=*/1);
}

Tensor chain_labels(const Tensor& T_SN, const Tensor& Y_NV) { return matmul(T_SN, Y_NV); }

std::vector<StepRecord> stage1_windows(const Tensor& Y_SV,
                                       const std::vector<std::string>& step_texts,
                                       const std::string& video_id, const Stage1Config& cfg) {
  cfg.validate();
  if (static_cast<int>(step_texts.size()) != Y_SV.rows())
    throw ShapeError("stage1_windows: " + std::to_string(step_texts.size()) + " texts for " +
                     std::to_string(Y_SV.rows()) + " rows");
  int S = Y_SV.rows(), T = Y_SV.cols();
  std::vector<StepRecord> records;
  records.reserve(static_cast<std::size_t>(S));
  for (int k = 0; k < S; ++k) {
    int c = 0;
    for (int t = 1; t < T; ++t)
      if (Y_SV.at(k, t) > Y_SV.at(k, c)) c = t;
    double peak = Y_SV.at(k, c);
    double cut = cfg.zeta * peak;
    int lo = c, hi = c;
    while (lo > 0 && Y_SV.at(k, lo - 1) >= cut) --lo;
    while (hi + 1 < T && Y_SV.at(k, hi + 1) >= cut) ++hi;
    StepRecord r;
    r.video_id = video_id;
    r.step_text = step_texts[static_cast<std::size_t>(k)];
    r.window = TimeWindow{lo, hi};
    r.score = peak;
    r.provenance = Provenance::stage1;
    r.discarded = peak < cfg.eps1;
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<StepRecord> flatten(const StepSet& steps) {
  std::vector<StepRecord> out;
  for (const auto& v : steps.videos) out.insert(out.end(), v.records.begin(), v.records.end());
  return out;
}

namespace {

// Summarizer-produced steps carry no features of their own: reuse the source
// narration row on an exact post-strip text match, else fall back to the
// segment mean.
void attach_summarizer_steps(const VideoEntry& video, const TrackData& narr,
                             const std::vector<TranscriptSegment>& segments,
                             const std::vector<SummarizerResponse>& responses, VideoSteps& out) {
  std::vector<std::vector<double>> feature_rows;
  int C = narr.features.dim();
  for (std::size_t si = 0; si < segments.size(); ++si) {
    const auto& seg = segments[si];
    const auto& resp = responses[si];
    if (resp.failed) {
      log_error("video " + video.id + ": segment " + std::to_string(seg.index) +
                " failed, skipping");
      continue;
    }
    std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
    for (int idx : seg.sentence_idx)
      for (int c = 0; c < C; ++c)
        mean[static_cast<std::size_t>(c)] += narr.features.rows.at(idx, c);
    for (auto& v : mean) v /= static_cast<double>(seg.sentence_idx.size());
    for (const auto& step : resp.steps) {
      int source = -1;
      for (int idx : seg.sentence_idx) {
        if (strip_discourse_markers(narr.track.sentences[static_cast<std::size_t>(idx)].text) ==
            step) {
          source = idx;
          break;
        }
      }
      out.texts.push_back(step);
      std::vector<double> row(static_cast<std::size_t>(C));
      for (int c = 0; c < C; ++c)
        row[static_cast<std::size_t>(c)] =
            source >= 0 ? narr.features.rows.at(source, c) : mean[static_cast<std::size_t>(c)];
      feature_rows.push_back(std::move(row));
    }
  }
  if (feature_rows.empty()) return;
  out.features = Tensor::zeros(static_cast<int>(feature_rows.size()), C);
  for (std::size_t i = 0; i < feature_rows.size(); ++i)
    for (int c = 0; c < C; ++c)
      out.features.at(static_cast<int>(i), c) = feature_rows[i][static_cast<std::size_t>(c)];
}

}  // namespace

StepSet run_stage1(const Dataset& dataset, StepSource source, Summarizer* summarizer,
                   const std::string& prompt, const Stage1Config& cfg, int jobs) {
  cfg.validate();
  if (source == StepSource::summarizer && summarizer == nullptr)
    throw UsageError("run_stage1: summarizer source requires a summarizer");

  int n = static_cast<int>(dataset.videos.size());
  StepSet out;
  out.videos.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.videos[static_cast<std::size_t>(i)].video_id = dataset.videos[static_cast<std::size_t>(i)].id;

  if (source == StepSource::synth_track) {
    for (int i = 0; i < n; ++i) {
      const auto& video = dataset.videos[static_cast<std::size_t>(i)];
      const TrackData* st = video.track_by_mode(TrackMode::step);
      if (st == nullptr) {
        log_info("video " + video.id + ": no step track, producing no stage1 steps");
        continue;
      }
      auto& vs = out.videos[static_cast<std::size_t>(i)];
      for (const auto& s : st->track.sentences) vs.texts.push_back(s.text);
      vs.features = st->features.rows.clone_detached();
    }
  } else {
    // One batched summarizer call across all videos keeps the file protocol to
    // a single request/response round trip.
    std::vector<SummarizerRequest> requests;
    std::vector<std::pair<int, TranscriptSegment>> origin;  // video index + segment
    for (int i = 0; i < n; ++i) {
      const auto& video = dataset.videos[static_cast<std::size_t>(i)];
      const TrackData* narr = video.track_by_mode(TrackMode::narration);
      if (narr == nullptr) continue;
      for (auto& seg : segment_transcript(narr->track, cfg.segment_target)) {
        SummarizerRequest req;
        req.segment_id = video.id + ":" + std::to_string(seg.index);
        req.prompt = prompt;
        for (int idx : seg.sentence_idx)
          req.sentences.push_back(narr->track.sentences[static_cast<std::size_t>(idx)].text);
        requests.push_back(std::move(req));
        origin.emplace_back(i, std::move(seg));
      }
    }
    std::vector<SummarizerResponse> responses = summarizer->summarize_batch(requests);
    if (responses.size() != requests.size())
      throw PipelineError("summarizer returned " + std::to_string(responses.size()) +
                          " responses for " + std::to_string(requests.size()) + " requests");
    std::size_t cursor = 0;
    for (int i = 0; i < n; ++i) {
      const auto& video = dataset.videos[static_cast<std::size_t>(i)];
      const TrackData* narr = video.track_by_mode(TrackMode::narration);
      if (narr == nullptr) continue;
      std::vector<TranscriptSegment> segs;
      std::vector<SummarizerResponse> resps;
      while (cursor < origin.size() && origin[cursor].first == i) {
        segs.push_back(origin[cursor].second);
        resps.push_back(responses[cursor]);
        ++cursor;
      }
      attach_summarizer_steps(video, *narr, segs, resps, out.videos[static_cast<std::size_t>(i)]);
    }
  }

  parallel_for(n, jobs, [&](int i) {
    const auto& video = dataset.videos[static_cast<std::size_t>(i)];
    auto& vs = out.videos[static_cast<std::size_t>(i)];
    if (vs.texts.empty()) return;
    const TrackData* narr = video.track_by_mode(TrackMode::narration);
    if (narr == nullptr) {
      log_info("video " + video.id + ": no narration track, cannot chain stage1 labels");
      vs.texts.clear();
      vs.features = Tensor();
      return;
    }
    NoGradGuard no_grad;
    AlignmentMatrix Y_NV = gt_matrix_from_windows(narr->track, video.duration_s);
    Tensor T_SN = text_similarity_matrix(vs.features, narr->features.rows, cfg.nu);
    Tensor Y_SV = chain_labels(T_SN, Y_NV.values);
    vs.records = stage1_windows(Y_SV, vs.texts, video.id, cfg);
  });
  return out;
}

// --- stage 2 -----------------------------------------------------------------------

std::vector<StepRecord> apply_stage2_threshold(std::vector<StepRecord> records, double eps2) {
  for (auto& r : records) r.discarded = r.score < eps2;
  return records;
}

Stage2Result stage2_refine(const Dataset& dataset, const StepSet& stage1,
                           const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                           const Stage2Config& cfg, int jobs) {
  cfg.validate();
  model_cfg.validate();
  train_cfg.validate();

  bool any_survivor = false;
  for (const auto& v : stage1.videos)
    for (const auto& r : v.records) any_survivor = any_survivor || !r.discarded;
  if (!any_survivor) throw PipelineError("stage2: no surviving stage1 records to train on");

  std::unordered_map<std::string, const VideoEntry*> by_id;
  for (const auto& v : dataset.videos) by_id[v.id] = &v;
  for (const auto& v : stage1.videos)
    if (by_id.find(v.video_id) == by_id.end())
      throw ValidationError("stage2: step set references unknown video " + v.video_id);

  Stage2Result result;
  StepSet current = stage1;
  Rng root(train_cfg.seed);
  for (int iteration = 0; iteration < cfg.iterations; ++iteration) {
    // Pseudo-labeled training set: surviving steps become a binary-window step
    // track; videos with no survivors sit this round out.
    Dataset train_ds;
    for (const auto& vs : current.videos) {
      std::vector<int> survivors;
      for (std::size_t k = 0; k < vs.records.size(); ++k)
        if (!vs.records[k].discarded) survivors.push_back(static_cast<int>(k));
      if (survivors.empty()) continue;
      const VideoEntry& src = *by_id.at(vs.video_id);
      VideoEntry entry;
      entry.id = src.id;
      entry.duration_s = src.duration_s;
      entry.features = src.features;
      TrackData td;
      td.track.video_id = src.id;
      td.track.mode = TrackMode::step;
      td.features.id = src.id + "/step";
      td.features.kind = FeatureKind::text;
      td.features.rows = Tensor::zeros(static_cast<int>(survivors.size()), vs.features.cols());
      for (std::size_t row = 0; row < survivors.size(); ++row) {
        int k = survivors[row];
        Sentence s;
        s.text = vs.texts[static_cast<std::size_t>(k)];
        s.source_window = vs.records[static_cast<std::size_t>(k)].window;
        s.alignable = true;
        td.track.sentences.push_back(std::move(s));
        for (int c = 0; c < vs.features.cols(); ++c)
          td.features.rows.at(static_cast<int>(row), c) = vs.features.at(k, c);
      }
      entry.tracks.push_back(std::move(td));
      train_ds.videos.push_back(std::move(entry));
    }
    if (train_ds.videos.empty())
      throw PipelineError("stage2 iteration " + std::to_string(iteration) +
                          ": every record was discarded, nothing left to train on");

    Rng init_rng = root.fork(static_cast<uint64_t>(iteration));
    result.model = ModelParams::init(model_cfg, init_rng);
    TrainConfig it_cfg = train_cfg;
    it_cfg.seed = root.next_u64();
    result.training = train(train_ds, result.model, it_cfg);

    // Re-infer every generated step, recycled ones included.
    StepSet next;
    next.videos.resize(current.videos.size());
    const ModelParams& model = result.model;
    parallel_for(static_cast<int>(current.videos.size()), jobs, [&](int i) {
      const auto& vs = current.videos[static_cast<std::size_t>(i)];
      auto& nv = next.videos[static_cast<std::size_t>(i)];
      nv.video_id = vs.video_id;
      nv.texts = vs.texts;
      nv.features = vs.features;
      if (vs.texts.empty()) return;
      NoGradGuard no_grad;
      const VideoEntry& video = *by_id.at(vs.video_id);
      ForwardResult fwd = forward(video.features.rows, vs.features, TrackMode::step, model);
      int T = fwd.A.T();
      for (int k = 0; k < fwd.A.K(); ++k) {
        int peak = 0;
        for (int t = 1; t < T; ++t)
          if (fwd.A.values.at(k, t) > fwd.A.values.at(k, peak)) peak = t;
        double score = fwd.A.values.at(k, peak);
        TimeWindow w;
        if (cfg.position == Stage2Config::Position::start) {
          w = TimeWindow{peak, std::min(peak + cfg.delta_sec - 1, T - 1)};
        } else {
          double cut = cfg.zeta * score;
          int lo = peak, hi = peak;
          while (lo > 0 && fwd.A.values.at(k, lo - 1) >= cut) --lo;
          while (hi + 1 < T && fwd.A.values.at(k, hi + 1) >= cut) ++hi;
          w = TimeWindow{lo, hi};
        }
        StepRecord r;
        r.video_id = vs.video_id;
        r.step_text = vs.texts[static_cast<std::size_t>(k)];
        r.window = w;
        r.score = score;
        r.provenance = Provenance::stage2;
        r.discarded = score < cfg.eps2;
        nv.records.push_back(std::move(r));
      }
    });
    current = std::move(next);
  }
  result.steps = std::move(current);
  return result;
}

}  // namespace stepalign
