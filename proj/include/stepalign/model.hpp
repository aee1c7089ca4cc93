#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stepalign/datamodel.hpp"
#include "stepalign/nn.hpp"
#include "stepalign/rng.hpp"
#include "stepalign/tensor.hpp"

namespace stepalign {

struct ModelConfig {
  int C_v = 512;        // video feature dim
  int C_t = 512;        // text feature dim
  int D = 256;          // model dim
  int d = 64;           // projection dim for the cosine head
  int n_enc_layers = 3;
  int n_dec_layers = 3;
  int n_heads = 8;
  int max_T = 1200;     // longest video (seconds) the positional table covers
  int max_K = 256;      // longest text track
  double dropout = 0.0;

  void validate() const;
  bool operator==(const ModelConfig& o) const = default;
};

// All trainable state. Copying copies handles: two ModelParams views of the
// same underlying tensors see each other's updates.
struct ModelParams {
  ModelConfig config;
  Linear phi_v;       // C_v -> D input projection for video
  Linear phi_j;       // C_t -> D input projection for text
  Tensor p_j;         // max_K x D learnable positional table, narration mode only
  Encoder encoder;
  Decoder decoder;
  Linear proj_v;      // D -> d, gives z_v
  Linear proj_j;      // D -> d, gives z_j
  Linear align_head;  // D -> 2, gives y_hat

  static ModelParams init(const ModelConfig& cfg, Rng& rng);
  ParamList named_params() const;
  std::vector<Tensor> param_tensors() const;
};

// Input projections plus positional terms. Video rows always get the sin/cos
// table; text rows get the learnable table only in narration mode, so step
// mode carries no order information.
struct Embedded {
  Tensor h_v;  // T x D
  Tensor h_j;  // K x D
};
Embedded embed(const Tensor& x_v, const Tensor& x_j, TrackMode mode, const ModelParams& params);

struct ForwardResult {
  AlignmentMatrix A;  // K x T cosine scores in [-1, 1]
  Tensor y_hat;       // K x 2 alignability logits
};
ForwardResult forward(const Tensor& x_v, const Tensor& x_j, TrackMode mode,
                      const ModelParams& params, const DropoutCtx& drop = {});

enum class WindowRule { argmax_only, fixed_duration };

struct PredictedWindow {
  TimeWindow window;
  int peak_t = 0;
  double peak_score = 0.0;
};

// Per row: peak at the earliest argmax; argmax_only gives [t*, t*],
// fixed_duration gives [t*, min(t* + delta_sec - 1, T - 1)].
std::vector<PredictedWindow> predict_windows(const AlignmentMatrix& A, WindowRule rule,
                                             int delta_sec = 8);

// Checkpoint: magic "NASV1", config JSON, then one named FSEQ1 param block per
// tensor, all values f64.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace stepalign
