#include "stepalign/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stepalign/evaluation.hpp"
#include "stepalign/rng.hpp"
#include "stepalign/tensor.hpp"
#include "stepalign/util.hpp"

namespace stepalign {

namespace {

// Unalignable narration text is drawn from chatter the mock summarizer is
// expected to throw away.
const char* const kFillerPool[] = {
    "hey guys welcome back to my channel",
    "please subscribe and hit the bell",
    "thanks for watching see you next time",
    "hello everyone welcome to today's video",
    "don't forget to like and comment below",
};
constexpr int kFillerPoolSize = 5;

std::vector<double> random_unit_vector(Rng& rng, int dim) {
  std::vector<double> v(static_cast<size_t>(dim));
  double norm_sq = 0.0;
  // Resample on the (measure-zero) all-zero draw so normalization is safe.
  do {
    norm_sq = 0.0;
    for (auto& x : v) {
      x = rng.gaussian();
      norm_sq += x * x;
    }
  } while (norm_sq == 0.0);
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (auto& x : v) x *= inv;
  return v;
}

// Contiguous tiling of [0, T) into n windows of width >= 2. Widths start at 2
// and the surplus is sprinkled uniformly.
std::vector<TimeWindow> tile_timeline(Rng& rng, int T, int n) {
  std::vector<int> widths(static_cast<size_t>(n), 2);
  int surplus = T - 2 * n;
  for (int i = 0; i < surplus; ++i) {
    widths[static_cast<size_t>(rng.uniform_int(0, n - 1))] += 1;
  }
  std::vector<TimeWindow> windows;
  windows.reserve(static_cast<size_t>(n));
  int cursor = 0;
  for (int k = 0; k < n; ++k) {
    windows.push_back(TimeWindow{cursor, cursor + widths[static_cast<size_t>(k)] - 1});
    cursor += widths[static_cast<size_t>(k)];
  }
  return windows;
}

// Perturbs each boundary by at most jitter_s while keeping every window
// non-empty, inside [0, T-1], and the starts sorted. Rejection-sampled; after
// 1000 failed attempts the true windows are returned unchanged.
std::vector<TimeWindow> jitter_windows(Rng& rng, const std::vector<TimeWindow>& windows,
                                       int jitter_s, int T) {
  if (jitter_s == 0) return windows;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<TimeWindow> out;
    out.reserve(windows.size());
    bool ok = true;
    int prev_start = -1;
    for (const auto& w : windows) {
      int s = w.start + rng.uniform_int(-jitter_s, jitter_s);
      int e = w.end + rng.uniform_int(-jitter_s, jitter_s);
      s = std::clamp(s, 0, T - 1);
      e = std::clamp(e, 0, T - 1);
      if (s > e || s < prev_start) {
        ok = false;
        break;
      }
      prev_start = s;
      out.push_back(TimeWindow{s, e});
    }
    if (ok) return out;
  }
  log_debug("jitter rejection budget exhausted, emitting true windows");
  return windows;
}

std::vector<double> noisy_copy(Rng& rng, const std::vector<double>& proto, double sigma) {
  std::vector<double> out(proto);
  for (auto& x : out) x += sigma * rng.gaussian();
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_videos < 1) throw ConfigError("synth: n_videos must be >= 1");
  if (C < 1) throw ConfigError("synth: C must be >= 1");
  if (steps_min < 1 || steps_min > steps_max) {
    throw ConfigError("synth: need 1 <= steps_min <= steps_max");
  }
  if (T_min > T_max) throw ConfigError("synth: T_min must be <= T_max");
  if (T_min < 2 * steps_max) {
    throw ConfigError("synth: T_min < 2 * steps_max leaves no room to tile " +
                      std::to_string(steps_max) + " windows of width >= 2");
  }
  if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
  if (alignable_frac < 0.0 || alignable_frac > 1.0) {
    throw ConfigError("synth: alignable_frac must be in [0, 1]");
  }
  if (jitter_s < 0) throw ConfigError("synth: jitter_s must be >= 0");
  if (n_tasks < 1) throw ConfigError("synth: n_tasks must be >= 1");
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  Dataset ds;
  ds.videos.reserve(static_cast<size_t>(cfg.n_videos));
  int filler_cursor = 0;

  for (int v = 0; v < cfg.n_videos; ++v) {
    // One stream per video: dataset contents do not depend on n_videos.
    Rng rng = root.fork(static_cast<uint64_t>(v));
    const std::string id = "vid-" + std::to_string(v);

    const int T = rng.uniform_int(cfg.T_min, cfg.T_max);
    const int n_steps = rng.uniform_int(cfg.steps_min, cfg.steps_max);
    const std::string task = "task-" + std::to_string(rng.uniform_int(0, cfg.n_tasks - 1));

    std::vector<std::vector<double>> protos;
    protos.reserve(static_cast<size_t>(n_steps));
    for (int k = 0; k < n_steps; ++k) protos.push_back(random_unit_vector(rng, cfg.C));

    const auto windows = tile_timeline(rng, T, n_steps);

    std::vector<std::vector<double>> frames;
    frames.reserve(static_cast<size_t>(T));
    {
      int k = 0;
      for (int t = 0; t < T; ++t) {
        while (t > windows[static_cast<size_t>(k)].end) ++k;
        frames.push_back(noisy_copy(rng, protos[static_cast<size_t>(k)], cfg.noise_sigma));
      }
    }

    VideoEntry entry;
    entry.id = id;
    entry.task_id = task;
    entry.duration_s = T;
    entry.features = FeatureSequence{id, FeatureKind::video, Tensor::from_rows(frames)};

    std::vector<bool> alignable(static_cast<size_t>(n_steps));
    for (int k = 0; k < n_steps; ++k) alignable[static_cast<size_t>(k)] = rng.bernoulli(cfg.alignable_frac);
    const auto narr_windows = jitter_windows(rng, windows, cfg.jitter_s, T);

    auto step_phrase = [&](int k) { return "step-" + std::to_string(k) + " of " + task; };

    TrackData narration;
    narration.track.video_id = id;
    narration.track.mode = TrackMode::narration;
    std::vector<std::vector<double>> narr_rows;
    narr_rows.reserve(static_cast<size_t>(n_steps));
    for (int k = 0; k < n_steps; ++k) {
      Sentence s;
      s.source_window = narr_windows[static_cast<size_t>(k)];
      if (alignable[static_cast<size_t>(k)]) {
        s.text = "then you do " + step_phrase(k);
        s.alignable = true;
        narr_rows.push_back(noisy_copy(rng, protos[static_cast<size_t>(k)], cfg.noise_sigma));
      } else {
        s.text = kFillerPool[filler_cursor % kFillerPoolSize];
        ++filler_cursor;
        s.alignable = false;
        narr_rows.push_back(random_unit_vector(rng, cfg.C));
      }
      narration.track.sentences.push_back(std::move(s));
    }
    narration.features = FeatureSequence{id, FeatureKind::text, Tensor::from_rows(narr_rows)};

    TrackData steps;
    steps.track.video_id = id;
    steps.track.mode = TrackMode::step;
    std::vector<std::vector<double>> step_rows;
    step_rows.reserve(static_cast<size_t>(n_steps));
    for (int k = 0; k < n_steps; ++k) {
      Sentence s;
      s.text = step_phrase(k);
      s.source_window = windows[static_cast<size_t>(k)];
      s.alignable = true;
      steps.track.sentences.push_back(std::move(s));
      step_rows.push_back(noisy_copy(rng, protos[static_cast<size_t>(k)], cfg.noise_sigma));
    }
    steps.features = FeatureSequence{id, FeatureKind::text, Tensor::from_rows(step_rows)};

    entry.tracks.push_back(std::move(narration));
    entry.tracks.push_back(std::move(steps));
    ds.videos.push_back(std::move(entry));
  }
  return ds;
}

double oracle_recall(const Dataset& dataset, TrackMode mode) {
  NoGradGuard ng;
  std::vector<EvalItem> items;
  for (const auto& video : dataset.videos) {
    const TrackData* td = video.track_by_mode(mode);
    if (td == nullptr) continue;
    AlignmentMatrix scores;
    scores.kind = MatrixKind::predicted_score;
    scores.values = matmul(l2_normalize_rows(td->features.rows),
                           transpose(l2_normalize_rows(video.features.rows)));
    auto video_items = items_from_scores(video, *td, scores);
    items.insert(items.end(), video_items.begin(), video_items.end());
  }
  return recall_at_1(items);
}

}  // namespace stepalign
