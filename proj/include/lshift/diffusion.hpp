#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lshift/rng.hpp"
#include "lshift/tensor.hpp"

namespace lshift {

using TokenIds = std::vector<std::int64_t>;

/// Variance-preserving noise schedule.
///
/// Index conventions: step t runs 1..steps. betas[t-1] and
/// posterior_variances[t-1] belong to step t; alpha_bars, alphas and sigmas
/// have steps+1 entries with alpha_bars[0] = 1. timesteps[t-1] is the
/// original training timestep of step t (identity unless respaced).
struct NoiseSchedule {
  std::string kind;
  int steps = 0;
  std::vector<int> timesteps;
  std::vector<double> betas;
  std::vector<double> alpha_bars;
  std::vector<double> alphas;
  std::vector<double> sigmas;
  std::vector<double> posterior_variances;

  double alpha(int t) const { return alphas.at(static_cast<std::size_t>(t)); }
  double sigma(int t) const { return sigmas.at(static_cast<std::size_t>(t)); }
  double beta(int t) const { return betas.at(static_cast<std::size_t>(t - 1)); }
};

/// kind is "quad" (sqrt-beta linear, squared) or "linear".
NoiseSchedule make_schedule(int steps, double beta1, double beta_last,
                            const std::string& kind = "quad");

/// Keeps `kept` evenly strided steps t_i = floor(i * steps / kept), i = 1..kept,
/// and rebuilds betas from consecutive alpha_bar ratios.
NoiseSchedule respace(const NoiseSchedule& sched, int kept);

/// u_t = alpha_t * u0 + sigma_t * eps. `t` holds either one step for the
/// whole batch or one step per sample along axis 0.
template <class T>
Tensor<T> q_sample(const Tensor<T>& u0, std::span<const int> t, const Tensor<T>& eps,
                   const NoiseSchedule& sched);
template <class T>
Tensor<T> q_sample(const Tensor<T>& u0, int t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  return q_sample(u0, std::span<const int>(&t, 1), eps, sched);
}

/// Noise predictor: (u_t, zero-based training timestep per sample, token ids per sample).
template <class T>
using EpsModel = std::function<Tensor<T>(const Tensor<T>& u_t, std::span<const int> t_index,
                                         const std::vector<TokenIds>& tokens)>;

template <class T>
struct LossSample {
  Tensor<T> loss;
  std::vector<int> timesteps;
  std::vector<bool> dropped;
};

/// Denoising objective. Draw order from `rng`: one timestep per sample
/// (uniform over 1..T), one text-dropout coin per sample, then the noise tensor.
template <class T>
LossSample<T> training_loss(const Tensor<T>& u0, const std::vector<TokenIds>& tokens,
                            const NoiseSchedule& sched, const EpsModel<T>& model, Rng& rng,
                            double text_drop_p, const TokenIds& null_tokens);

/// eps_uncond + s * (eps_cond - eps_uncond). s = 1 returns eps_cond and
/// s = 0 returns eps_uncond without evaluating the other branch.
template <class T>
Tensor<T> guided_eps(const EpsModel<T>& model, const Tensor<T>& u_t, std::span<const int> t_index,
                     const std::vector<TokenIds>& tokens, const std::vector<TokenIds>& null_tokens,
                     double scale);

/// Pure combination used by guided_eps.
template <class T>
Tensor<T> combine_guidance(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double scale);

enum class ReverseVariance { posterior, beta };

/// One reverse step at schedule step t (1-based):
///   mean = (u_t - (beta_t / sigma_t) * eps_hat) * (1 / sqrt(1 - beta_t))
///   u_{t-1} = mean + sqrt(var_t) * z,  z ~ N(0, I) from `rng`, skipped when t == 1.
template <class T>
Tensor<T> ddpm_step(const Tensor<T>& u_t, int t, const Tensor<T>& eps_hat,
                    const NoiseSchedule& sched, Rng& rng,
                    ReverseVariance variance = ReverseVariance::posterior);

struct SamplerConfig {
  int steps = 100;
  double guidance_scale = 7.5;
  std::uint64_t seed = 0;
  ReverseVariance variance = ReverseVariance::posterior;
  bool keep_trajectory = false;
};

template <class T>
struct SampleResult {
  Tensor<T> latents;
  std::vector<Tensor<T>> trajectory;
};

/// Runs the reverse process on `sched` exactly as given: draws the initial
/// noise from Rng(seed), then iterates guided_eps + ddpm_step from the last
/// step down to step 1.
template <class T>
SampleResult<T> run_sampler(const EpsModel<T>& model, const NoiseSchedule& sched,
                            const SamplerConfig& cfg, const std::vector<TokenIds>& tokens,
                            const std::vector<TokenIds>& null_tokens, const Shape& shape);

/// run_sampler on respace(sched, cfg.steps).
template <class T>
SampleResult<T> sample(const EpsModel<T>& model, const NoiseSchedule& sched,
                       const SamplerConfig& cfg, const std::vector<TokenIds>& tokens,
                       const std::vector<TokenIds>& null_tokens, const Shape& shape);

}  // namespace lshift
