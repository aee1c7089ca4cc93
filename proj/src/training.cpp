#include "stepalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "stepalign/optim.hpp"
#include "stepalign/util.hpp"

namespace stepalign {

void TrainConfig::validate() const {
  if (tau <= 0.0) throw ConfigError("tau must be positive");
  if (lr0 < 0.0) throw ConfigError("lr0 must be nonnegative");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_video_s < 1) throw ConfigError("max_video_s must be >= 1");
  if (narration_prob < 0.0 || narration_prob > 1.0)
    throw ConfigError("narration_prob must be in [0, 1]");
  if (lambda_alignability < 0.0) throw ConfigError("lambda_alignability must be nonnegative");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be nonnegative");
}

InfoNceResult infonce_loss(const Tensor& A, const Tensor& Y, double tau) {
  if (tau <= 0.0) throw ConfigError("infonce_loss: tau must be positive");
  if (A.rows() != Y.rows() || A.cols() != Y.cols())
    throw ShapeError("infonce_loss: A is " + std::to_string(A.rows()) + "x" +
                     std::to_string(A.cols()) + ", Y is " + std::to_string(Y.rows()) + "x" +
                     std::to_string(Y.cols()));
  int K = Y.rows(), T = Y.cols();
  std::vector<int> included;
  for (int k = 0; k < K; ++k) {
    bool any = false;
    for (int t = 0; t < T; ++t) {
      double y = Y.at(k, t);
      if (y != 0.0 && y != 1.0)
        throw ValidationError("infonce_loss: Y must be binary, found " + format_double(y));
      any = any || y == 1.0;
    }
    if (any) included.push_back(k);
  }
  InfoNceResult result;
  result.included_rows = static_cast<int>(included.size());
  if (included.empty()) {
    result.loss = Tensor::scalar(0.0);
    result.no_positives = true;
    return result;
  }
  // Rows without positives are dropped before any log: a log(0) forward value
  // in a dead row would still turn into 0 * inf = NaN in the backward sweep.
  Tensor S = gather_rows(scale(A, 1.0 / tau), included);
  const int n = static_cast<int>(included.size());
  Tensor Y_inc = Tensor::zeros(n, T);
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < T; ++t) Y_inc.at(i, t) = Y.at(included[static_cast<size_t>(i)], t);
  // Row maxima are gradient-transparent shifts; subtracting them keeps exp in
  // range and makes the all-ones-Y loss an exact zero (both logs see the same
  // bits).
  Tensor M = Tensor::zeros(n, T);
  for (int i = 0; i < n; ++i) {
    double mx = S.at(i, 0);
    for (int t = 1; t < T; ++t) mx = std::max(mx, S.at(i, t));
    for (int t = 0; t < T; ++t) M.at(i, t) = mx;
  }
  Tensor E = exp(sub(S, M));
  Tensor pos_mass = row_sums(mul(E, Y_inc));  // n x 1
  Tensor all_mass = row_sums(E);              // n x 1
  Tensor per_row = sub(log(pos_mass), log(all_mass));
  result.loss = scale(sum_all(per_row), -1.0 / static_cast<double>(n));
  return result;
}

TrainSample make_sample(const VideoEntry& video, TrackMode desired_mode, const TrainConfig& cfg,
                        Rng& rng) {
  const TrackData* td = video.track_by_mode(desired_mode);
  if (td == nullptr) {
    // Fall back to whichever track the video carries; its own mode applies.
    if (video.tracks.empty()) throw ValidationError("video " + video.id + " has no tracks");
    td = &video.tracks.front();
  }
  TrainSample s;
  s.video_id = video.id;
  s.mode = td->track.mode;

  int T = video.duration_s;
  int T_cut = std::min(T, cfg.max_video_s);
  AlignmentMatrix full = gt_matrix_from_windows(td->track, T);
  int K = full.K();

  s.x_v = T_cut == T ? video.features.rows.clone_detached()
                     : Tensor::zeros(T_cut, video.features.dim());
  if (T_cut != T) {
    for (int t = 0; t < T_cut; ++t)
      for (int c = 0; c < video.features.dim(); ++c)
        s.x_v.at(t, c) = video.features.rows.at(t, c);
  }

  s.perm.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) s.perm[static_cast<std::size_t>(k)] = k;
  if (s.mode == TrackMode::step) rng.shuffle(s.perm);

  s.x_j = Tensor::zeros(K, td->features.dim());
  s.Y.kind = MatrixKind::ground_truth_binary;
  s.Y.values = Tensor::zeros(K, T_cut);
  for (int k = 0; k < K; ++k) {
    int src = s.perm[static_cast<std::size_t>(k)];
    for (int c = 0; c < td->features.dim(); ++c) s.x_j.at(k, c) = td->features.rows.at(src, c);
    // Truncation drops the columns beyond the cut; windows entirely past it
    // leave an all-zero row, which the loss then excludes.
    for (int t = 0; t < T_cut; ++t) s.Y.values.at(k, t) = full.values.at(src, t);
  }
  return s;
}

std::vector<TrainSample> make_batch(const Dataset& dataset, const std::vector<int>& order,
                                    std::size_t cursor, const TrainConfig& cfg, Rng& rng) {
  if (dataset.videos.empty()) throw ValidationError("make_batch: empty dataset");
  std::vector<TrainSample> batch;
  for (int b = 0; b < cfg.batch_size && cursor + static_cast<std::size_t>(b) < order.size(); ++b) {
    int vi = order[cursor + static_cast<std::size_t>(b)];
    TrackMode mode =
        rng.bernoulli(cfg.narration_prob) ? TrackMode::narration : TrackMode::step;
    batch.push_back(make_sample(dataset.videos[static_cast<std::size_t>(vi)], mode, cfg, rng));
  }
  return batch;
}

// Binary cross-entropy of the alignability logits against "row has any
// positive"; only built when lambda > 0 so the default run leaves the head
// untouched.
Tensor alignability_loss(const Tensor& y_hat, const AlignmentMatrix& Y) {
  int K = y_hat.rows();
  Tensor onehot = Tensor::zeros(K, 2);
  for (int k = 0; k < K; ++k) {
    bool any = false;
    for (int t = 0; t < Y.T(); ++t) any = any || Y.values.at(k, t) == 1.0;
    onehot.at(k, any ? 1 : 0) = 1.0;
  }
  Tensor logp = log(softmax(y_hat, 1));
  return scale(sum_all(mul(logp, onehot)), -1.0 / K);
}

TrainResult train(const Dataset& dataset, ModelParams& params, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.videos.empty()) throw ValidationError("train: empty dataset");
  Rng rng(cfg.seed);
  std::vector<Tensor> tensors = params.param_tensors();
  AdamWState opt = AdamWState::init(tensors, cfg.lr0, cfg.weight_decay);

  int n = static_cast<int>(dataset.videos.size());
  int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int total_steps = cfg.epochs * steps_per_epoch;
  int global_step = 0;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = rng.permutation(n);
    double epoch_loss = 0.0;
    int epoch_samples = 0;
    double lr_now = 0.0;
    for (std::size_t cursor = 0; cursor < order.size();
         cursor += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<TrainSample> batch = make_batch(dataset, order, cursor, cfg, rng);
      for (auto& t : tensors) t.zero_grad();
      double batch_loss = 0.0;
      int contributing = 0;
      DropoutCtx drop{params.config.dropout, &rng};
      for (const auto& sample : batch) {
        ForwardResult fwd = forward(sample.x_v, sample.x_j, sample.mode, params, drop);
        InfoNceResult nce = infonce_loss(fwd.A.values, sample.Y.values, cfg.tau);
        if (nce.no_positives) continue;
        Tensor loss = nce.loss;
        if (cfg.lambda_alignability > 0.0)
          loss = add(loss, scale(alignability_loss(fwd.y_hat, sample.Y),
                                 cfg.lambda_alignability));
        double value = loss.item();
        if (!std::isfinite(value)) {
          std::string ids;
          for (const auto& s : batch) ids += (ids.empty() ? "" : ", ") + s.video_id;
          throw TrainError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(global_step) + "; batch videos: " + ids);
        }
        batch_loss += value;
        contributing += 1;
        backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
      }
      lr_now = cosine_lr(global_step, total_steps, cfg.lr0);
      adamw_step(tensors, opt, lr_now);
      global_step += 1;
      epoch_loss += batch_loss;
      epoch_samples += contributing;
    }
    EpochStat stat;
    stat.epoch = epoch;
    stat.mean_loss = epoch_samples > 0 ? epoch_loss / epoch_samples : 0.0;
    stat.lr = lr_now;
    result.curve.push_back(stat);
    log_debug("epoch " + std::to_string(epoch) + " mean_loss " + format_double(stat.mean_loss));
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochStat>& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "epoch,mean_loss,lr\n";
  for (const auto& s : curve)
    out << s.epoch << ',' << format_double(s.mean_loss) << ',' << format_double(s.lr) << '\n';
}

}  // namespace stepalign
