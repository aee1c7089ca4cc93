#pragma once

#include <cstdint>

#include "stepalign/datamodel.hpp"

namespace stepalign {

// Planted-alignment generator. Each video tiles its timeline with contiguous
// action windows, one random unit prototype per action; video features are the
// prototype of the current window plus Gaussian noise. The step track records
// the true windows; the narration track gets jittered copies and an alignable
// coin flip, with unalignable sentences swapped to filler text and an
// off-manifold feature row.
struct SynthConfig {
  int n_videos = 20;
  int T_min = 48;  // seconds, 1 feature per second
  int T_max = 96;
  int C = 64;      // feature dim
  int steps_min = 8;
  int steps_max = 13;  // uniform in [8, 13]: mean 10.5 actions per video
  double noise_sigma = 0.1;
  double alignable_frac = 0.3;
  int jitter_s = 0;
  int n_tasks = 4;
  uint64_t seed = 0;

  void validate() const;
};

Dataset generate(const SynthConfig& cfg);

// R@1 of raw feature cosine, no model: the backbone baseline a trained model
// has to beat.
double oracle_recall(const Dataset& dataset, TrackMode mode = TrackMode::step);

}  // namespace stepalign
