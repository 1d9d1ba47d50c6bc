#pragma once

#include <cstdint>
#include <vector>

#include "lshift/params.hpp"

namespace lshift {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments per parameter, in ParamStore order.
template <class T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update using the gradients stored on `params`.
/// Parameters without a gradient are treated as having a zero gradient.
/// Throws NumericError if any gradient is non-finite.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const AdamConfig& cfg);

/// ema <- decay * ema + (1 - decay) * params, elementwise.
template <class T>
void ema_update(ParamStore<T>& ema, const ParamStore<T>& params, double decay);

/// Decay for update number `step` (1-based): min(decay, (1 + step) / (10 + step)).
/// Early updates average over the steps taken so far instead of the initial weights.
double ema_decay_at(double decay, std::int64_t step);

/// Euclidean norm of all gradients (missing gradients count as zero).
template <class T>
double grad_norm(const ParamStore<T>& params);

}  // namespace lshift
