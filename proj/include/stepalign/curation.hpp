#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stepalign/datamodel.hpp"
#include "stepalign/model.hpp"
#include "stepalign/tensor.hpp"
#include "stepalign/training.hpp"

namespace stepalign {

struct Stage1Config {
  double nu = 0.07;        // softmax temperature for the text similarity matrix
  double zeta = 0.7;       // window expansion stops below zeta * peak
  double eps1 = 0.20;      // steps peaking below this are discarded
  int segment_target = 10; // sentences per transcript segment

  void validate() const;
};

struct Stage2Config {
  enum class Position { start, center };

  double eps2 = 0.8;       // peak threshold after self-training
  int delta_sec = 8;       // window length when position == start
  Position position = Position::start;
  int iterations = 1;
  double zeta = 0.7;       // expansion ratio when position == center

  void validate() const;
};

Stage2Config::Position position_from_string(const std::string& s);
const char* to_string(Stage2Config::Position p);

// Contiguous chunks of ~target sentences; a trailing chunk shorter than
// target/2 merges into its predecessor. Indices are 1-based per segment.
struct TranscriptSegment {
  std::string video_id;
  int index = 1;
  std::vector<int> sentence_idx;
};

std::vector<TranscriptSegment> segment_transcript(const TextTrack& narration, int target = 10);

// --- summarizer boundary ---------------------------------------------------------

struct SummarizerRequest {
  std::string segment_id;  // "<video_id>:<segment_index>"
  std::string prompt;
  std::vector<std::string> sentences;
};

struct SummarizerResponse {
  std::string segment_id;
  bool failed = false;
  std::vector<std::string> steps;
};

class Summarizer {
 public:
  virtual ~Summarizer() = default;
  virtual std::vector<SummarizerResponse> summarize_batch(
      const std::vector<SummarizerRequest>& requests) = 0;
};

// Deterministic stand-in: drops filler sentences (greetings, channel talk),
// strips leading discourse markers, deduplicates exact repeats, and emits the
// rest verbatim in order.
class MockSummarizer : public Summarizer {
 public:
  std::vector<SummarizerResponse> summarize_batch(
      const std::vector<SummarizerRequest>& requests) override;
  SummarizerResponse summarize_one(const SummarizerRequest& request) const;
};

bool is_filler_sentence(const std::string& text);
std::string strip_discourse_markers(const std::string& text);

// Writes requests.jsonl into dir, optionally runs `command <requests> <responses>`,
// then reads responses.jsonl. Segments without a response row are marked failed.
class FileProtocolSummarizer : public Summarizer {
 public:
  explicit FileProtocolSummarizer(std::filesystem::path dir, std::string command = "");
  std::vector<SummarizerResponse> summarize_batch(
      const std::vector<SummarizerRequest>& requests) override;

 private:
  std::filesystem::path dir_;
  std::string command_;
};

// --- stage 1 ---------------------------------------------------------------------

// Row-stochastic softmax over narrations of (step_feats . narr_feats^T) / nu.
Tensor text_similarity_matrix(const Tensor& step_feats, const Tensor& narr_feats, double nu);

// Y_SV = T_SN . Y_NV
Tensor chain_labels(const Tensor& T_SN, const Tensor& Y_NV);

// Per step row: peak at earliest argmax; contiguous expansion while the score
// stays >= zeta * peak; discarded when the peak is below eps1.
std::vector<StepRecord> stage1_windows(const Tensor& Y_SV,
                                       const std::vector<std::string>& step_texts,
                                       const std::string& video_id, const Stage1Config& cfg);

// Steps of one video moving through the pipeline; records run parallel to
// texts. Videos whose summarizer output is empty keep an empty text list and
// an undefined features tensor.
struct VideoSteps {
  std::string video_id;
  std::vector<std::string> texts;
  Tensor features;  // S x C
  std::vector<StepRecord> records;
};

struct StepSet {
  std::vector<VideoSteps> videos;
};

std::vector<StepRecord> flatten(const StepSet& steps);

enum class StepSource {
  synth_track,  // use the dataset's step track texts + features
  summarizer,   // segment the narration and ask the summarizer
};

// Full chaining path per video: Y_NV from the narration windows, T_SN from
// text features, stage1_windows on the product. With StepSource::summarizer,
// each step's feature row is the source narration's row when the step text
// matches a stripped sentence exactly, otherwise the segment mean.
StepSet run_stage1(const Dataset& dataset, StepSource source, Summarizer* summarizer,
                   const std::string& prompt, const Stage1Config& cfg, int jobs = 1);

// --- stage 2 ---------------------------------------------------------------------

struct Stage2Result {
  StepSet steps;         // stage2 records for every generated step (recycled included)
  ModelParams model;     // model trained in the final iteration
  TrainResult training;  // loss curve of the final iteration
};

// Per iteration: train a fresh model on the surviving records as binary
// pseudo-ground-truth (step-mode samples), then re-infer windows for ALL
// steps; peaks below eps2 are discarded, the rest get a fixed-duration window
// at the peak (or a zeta-expansion when position == center).
Stage2Result stage2_refine(const Dataset& dataset, const StepSet& stage1,
                           const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                           const Stage2Config& cfg, int jobs = 1);

// Re-applies the eps2 decision to existing records using their stored scores.
std::vector<StepRecord> apply_stage2_threshold(std::vector<StepRecord> records, double eps2);

}  // namespace stepalign
