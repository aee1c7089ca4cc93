#include "stepalign/optim.hpp"

#include <cmath>
#include <string>

#include "stepalign/util.hpp"

namespace stepalign {

AdamWState AdamWState::init(const std::vector<Tensor>& params, double lr0, double weight_decay) {
  AdamWState s;
  s.lr0 = lr0;
  s.weight_decay = weight_decay;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.emplace_back(p.numel(), 0.0);
    s.v.emplace_back(p.numel(), 0.0);
  }
  return s;
}

void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr_now) {
  if (params.size() != state.m.size())
    throw UsageError("adamw_step: state tracks " + std::to_string(state.m.size()) +
                     " params, got " + std::to_string(params.size()));
  state.step_count += 1;
  double bc1 = 1.0 - std::pow(state.beta1, state.step_count);
  double bc2 = 1.0 - std::pow(state.beta2, state.step_count);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel()) throw ShapeError("adamw_step: param " + std::to_string(i) + " resized");
    auto& value = p.data();
    const double* g = p.has_grad() ? p.grad().data() : nullptr;
    for (std::size_t j = 0; j < value.size(); ++j) {
      double gj = g ? g[j] : 0.0;
      value[j] -= lr_now * state.weight_decay * value[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      value[j] -= lr_now * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double cosine_lr(int step, int total_steps, double lr0) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw UsageError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                     std::to_string(total_steps) + "]");
  constexpr double kPi = 3.14159265358979323846;
  return lr0 * 0.5 * (1.0 + std::cos(kPi * step / total_steps));
}

}  // namespace stepalign
