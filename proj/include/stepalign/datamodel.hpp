#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stepalign/tensor.hpp"

namespace stepalign {

// Time is an integer 1 Hz grid; windows are inclusive on both ends.
struct TimeWindow {
  int start = 0;
  int end = 0;

  bool contains(int t) const { return t >= start && t <= end; }
  int length() const { return end - start + 1; }
  bool operator==(const TimeWindow& o) const { return start == o.start && end == o.end; }
};

enum class FeatureKind { video = 0, text = 1, param = 2 };
enum class TrackMode { narration, step };
enum class MatrixKind { ground_truth_binary, predicted_score, pseudo_label_score };
enum class Provenance { stage1, stage2 };

const char* to_string(TrackMode mode);
const char* to_string(Provenance p);
TrackMode track_mode_from_string(const std::string& s);
Provenance provenance_from_string(const std::string& s);

// A row-major feature matrix: T x C for video (one row per second), K x C for
// text (one row per sentence).
struct FeatureSequence {
  std::string id;
  FeatureKind kind = FeatureKind::video;
  Tensor rows;

  int length() const { return rows.rows(); }
  int dim() const { return rows.cols(); }
};

struct Sentence {
  std::string text;
  std::optional<TimeWindow> source_window;
  std::optional<bool> alignable;

  // Unalignable means: explicitly flagged false, or no window at all.
  bool is_alignable() const { return source_window.has_value() && alignable.value_or(true); }
};

struct TextTrack {
  std::string video_id;
  TrackMode mode = TrackMode::narration;
  std::vector<Sentence> sentences;

  // Narration tracks must carry a window per sentence, sorted by start.
  // Throws ValidationError on violation.
  void validate() const;
};

struct AlignmentMatrix {
  MatrixKind kind = MatrixKind::predicted_score;
  Tensor values;  // K x T

  int K() const { return values.rows(); }
  int T() const { return values.cols(); }
};

struct StepRecord {
  std::string video_id;
  std::string step_text;
  TimeWindow window;
  double score = 0.0;
  Provenance provenance = Provenance::stage1;
  bool discarded = false;
};

// A text track plus the feature rows standing in for its encoded sentences;
// features row k belongs to sentence k.
struct TrackData {
  TextTrack track;
  FeatureSequence features;
};

struct VideoEntry {
  std::string id;
  std::optional<std::string> task_id;  // groups videos for task-averaged metrics
  int duration_s = 0;
  FeatureSequence features;  // T x C video features
  std::vector<TrackData> tracks;

  const TrackData* track_by_mode(TrackMode mode) const;
};

struct Dataset {
  std::vector<VideoEntry> videos;

  const VideoEntry* find(const std::string& id) const;
};

// Binary row k spans exactly the sentence's window; sentences that are not
// alignable produce all-zero rows. Windows must lie within [0, T-1].
AlignmentMatrix gt_matrix_from_windows(const TextTrack& track, int T);

// --- file formats --------------------------------------------------------------
// On-disk dataset layout (all paths in manifest.jsonl are dir-relative):
//   manifest.jsonl
//   videos/<id>/video.fseq
//   videos/<id>/<mode>.jsonl        sentence track
//   videos/<id>/<mode>.fseq         that track's text features (same stem)

// FSEQ1 block: magic "FSEQ1", kind u8, length u32, dim u32, dtype u8 (0=f32,
// 1=f64), then row-major values, everything little-endian. Checkpoints embed
// the same blocks, so encode/decode are exposed alongside the file wrappers.
std::string encode_fseq(const FeatureSequence& fs, bool as_f64 = true);
FeatureSequence decode_fseq(const std::string& bytes, const std::string& origin);

void write_feature_file(const std::filesystem::path& path, const FeatureSequence& fs,
                        bool as_f64 = true);
FeatureSequence read_feature_file(const std::filesystem::path& path);

void write_track_file(const std::filesystem::path& path, const TextTrack& track);
TextTrack read_track_file(const std::filesystem::path& path);

void write_alignment_csv(const std::filesystem::path& path, const AlignmentMatrix& m);
AlignmentMatrix read_alignment_csv(const std::filesystem::path& path,
                                   MatrixKind kind = MatrixKind::predicted_score);

void write_step_records(const std::filesystem::path& path, const std::vector<StepRecord>& records);
std::vector<StepRecord> read_step_records(const std::filesystem::path& path);

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset, bool as_f64 = true);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace stepalign
