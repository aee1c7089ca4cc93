#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stepalign/datamodel.hpp"
#include "stepalign/model.hpp"
#include "stepalign/tensor.hpp"

namespace stepalign {

struct TrainConfig {
  double tau = 0.07;                 // contrastive temperature
  double lr0 = 1e-4;
  int epochs = 12;
  int batch_size = 8;
  int max_video_s = 1200;            // truncate longer videos
  double narration_prob = 0.5;       // type-token draw: narration vs step
  double lambda_alignability = 0.0;  // weight of the auxiliary y_hat loss
  double weight_decay = 0.0;
  uint64_t seed = 0;

  void validate() const;
};

struct InfoNceResult {
  Tensor loss;             // scalar, >= 0
  int included_rows = 0;   // rows of Y with at least one positive
  bool no_positives = false;
};

// Per included row k: -log( sum_t Y[k,t] exp(A[k,t]/tau) / sum_t exp(A[k,t]/tau) ),
// averaged over included rows. Rows with all-zero Y are excluded from both the
// sum and the average; when every row is excluded the loss is a defined zero
// with no_positives set. Y must be binary and is treated as constant.
InfoNceResult infonce_loss(const Tensor& A, const Tensor& Y, double tau);

// Mean cross-entropy of the K x 2 alignability logits against "row k of Y has
// any positive" targets. Only enters the total loss when lambda_alignability
// is positive.
Tensor alignability_loss(const Tensor& y_hat, const AlignmentMatrix& Y);

// One training sample: a (possibly truncated) video, one of its tracks under
// an assigned type-token, and the matching binary target matrix. In step mode
// the sentence rows of x_j and Y are jointly shuffled.
struct TrainSample {
  std::string video_id;
  TrackMode mode = TrackMode::step;
  Tensor x_v;          // T' x C_v
  Tensor x_j;          // K x C_t
  AlignmentMatrix Y;   // K x T' binary
  std::vector<int> perm;  // sentence permutation applied (identity in narration mode)
};

TrainSample make_sample(const VideoEntry& video, TrackMode desired_mode,
                        const TrainConfig& cfg, Rng& rng);

// Batch of `batch_size` samples drawn in order from `order[cursor...]`.
std::vector<TrainSample> make_batch(const Dataset& dataset, const std::vector<int>& order,
                                    std::size_t cursor, const TrainConfig& cfg, Rng& rng);

struct EpochStat {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStat> curve;
};

// AdamW + cosine schedule over epochs * ceil(n_videos / batch_size) steps.
// Gradients accumulate over the samples of a batch in a fixed order, so runs
// are reproducible. Aborts with TrainError naming the batch on NaN loss.
TrainResult train(const Dataset& dataset, ModelParams& params, const TrainConfig& cfg);

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStat>& curve);

}  // namespace stepalign
