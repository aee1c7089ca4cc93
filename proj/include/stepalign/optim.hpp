#pragma once

#include <vector>

#include "stepalign/tensor.hpp"

namespace stepalign {

// AdamW with decoupled weight decay. Moment buffers are indexed positionally,
// so the parameter list passed to adamw_step must keep a stable order.
struct AdamWState {
  int step_count = 0;
  double lr0 = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamWState init(const std::vector<Tensor>& params, double lr0,
                         double weight_decay = 0.0);
};

// One update over all params at learning rate lr_now. Params without an
// allocated gradient are treated as zero-gradient (moments decay, value
// moves only through weight decay).
void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr_now);

// lr0 * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(int step, int total_steps, double lr0);

}  // namespace stepalign
