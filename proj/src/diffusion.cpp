#include "lshift/diffusion.hpp"

#include <cmath>
#include <string>

namespace lshift {

namespace {

void fill_derived(NoiseSchedule& s) {
  const auto n = static_cast<std::size_t>(s.steps);
  s.alphas.resize(n + 1);
  s.sigmas.resize(n + 1);
  for (std::size_t t = 0; t <= n; ++t) {
    s.alphas[t] = std::sqrt(s.alpha_bars[t]);
    s.sigmas[t] = std::sqrt(1.0 - s.alpha_bars[t]);
  }
  s.posterior_variances.resize(n);
  for (std::size_t t = 1; t <= n; ++t)
    s.posterior_variances[t - 1] =
        (1.0 - s.alpha_bars[t - 1]) / (1.0 - s.alpha_bars[t]) * s.betas[t - 1];
}

void check_step(const NoiseSchedule& sched, int t, const char* what) {
  if (t < 1 || t > sched.steps)
    throw std::out_of_range(std::string(what) + ": step " + std::to_string(t) +
                            " outside [1, " + std::to_string(sched.steps) + "]");
}

}  // namespace

NoiseSchedule make_schedule(int steps, double beta1, double beta_last, const std::string& kind) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  if (!(beta1 > 0.0 && beta1 <= beta_last && beta_last < 1.0))
    throw ConfigError("schedule bounds must satisfy 0 < beta1 <= betaT < 1");
  if (kind != "quad" && kind != "linear") throw ConfigError("unknown schedule kind: " + kind);
  NoiseSchedule s;
  s.kind = kind;
  s.steps = steps;
  s.betas.resize(static_cast<std::size_t>(steps));
  s.timesteps.resize(static_cast<std::size_t>(steps));
  for (int t = 1; t <= steps; ++t) {
    s.timesteps[t - 1] = t;
    if (steps == 1) {
      s.betas[0] = beta1;
      continue;
    }
    const double frac = static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    if (kind == "quad") {
      const double r = std::sqrt(beta1) + frac * (std::sqrt(beta_last) - std::sqrt(beta1));
      s.betas[t - 1] = r * r;
    } else {
      s.betas[t - 1] = beta1 + frac * (beta_last - beta1);
    }
  }
  s.alpha_bars.resize(static_cast<std::size_t>(steps) + 1);
  s.alpha_bars[0] = 1.0;
  for (int t = 1; t <= steps; ++t) s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - s.betas[t - 1]);
  fill_derived(s);
  return s;
}

NoiseSchedule respace(const NoiseSchedule& sched, int kept) {
  if (kept < 1 || kept > sched.steps)
    throw ConfigError("respacing to " + std::to_string(kept) + " steps, schedule has " +
                      std::to_string(sched.steps));
  NoiseSchedule s;
  s.kind = sched.kind;
  s.steps = kept;
  s.timesteps.resize(static_cast<std::size_t>(kept));
  s.betas.resize(static_cast<std::size_t>(kept));
  s.alpha_bars.assign(static_cast<std::size_t>(kept) + 1, 1.0);
  int prev = 0;
  for (int i = 1; i <= kept; ++i) {
    const int t = static_cast<int>(static_cast<std::int64_t>(i) * sched.steps / kept);
    s.timesteps[i - 1] = sched.timesteps[t - 1];
    s.alpha_bars[i] = sched.alpha_bars[t];
    // Adjacent steps keep their stored beta, which is the same quantity
    // without the rounding of the ratio.
    s.betas[i - 1] = (t == prev + 1) ? sched.betas[t - 1]
                                     : 1.0 - sched.alpha_bars[t] / sched.alpha_bars[prev];
    prev = t;
  }
  fill_derived(s);
  return s;
}

template <class T>
Tensor<T> q_sample(const Tensor<T>& u0, std::span<const int> t, const Tensor<T>& eps,
                   const NoiseSchedule& sched) {
  if (u0.shape() != eps.shape())
    throw ShapeError("q_sample: noise shape " + shape_str(eps.shape()) + " differs from " +
                     shape_str(u0.shape()));
  const std::int64_t batch = u0.rank() > 0 ? u0.dim(0) : 1;
  if (t.size() != 1 && static_cast<std::int64_t>(t.size()) != batch)
    throw ShapeError("q_sample: need one timestep or one per sample");
  for (int ti : t) check_step(sched, ti, "q_sample");
  const std::int64_t per = u0.numel() / std::max<std::int64_t>(1, batch);
  const auto x = u0.data();
  const auto e = eps.data();
  std::vector<T> out(x.size());
  for (std::int64_t b = 0; b < batch; ++b) {
    const int ti = t.size() == 1 ? t[0] : t[b];
    const T a = static_cast<T>(sched.alpha(ti));
    const T s = static_cast<T>(sched.sigma(ti));
    for (std::int64_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x[i] + s * e[i];
  }
  return Tensor<T>::from(u0.shape(), std::move(out));
}

template <class T>
LossSample<T> training_loss(const Tensor<T>& u0, const std::vector<TokenIds>& tokens,
                            const NoiseSchedule& sched, const EpsModel<T>& model, Rng& rng,
                            double text_drop_p, const TokenIds& null_tokens) {
  const auto batch = u0.dim(0);
  if (static_cast<std::int64_t>(tokens.size()) != batch)
    throw ShapeError("training_loss: one token sequence per sample required");
  LossSample<T> out;
  out.timesteps.resize(static_cast<std::size_t>(batch));
  for (auto& t : out.timesteps)
    t = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sched.steps)));
  out.dropped.resize(static_cast<std::size_t>(batch));
  std::vector<TokenIds> cond = tokens;
  for (std::int64_t b = 0; b < batch; ++b) {
    out.dropped[b] = rng.bernoulli(text_drop_p);
    if (out.dropped[b]) cond[b] = null_tokens;
  }
  const Tensor<T> eps = Tensor<T>::randn(u0.shape(), rng);
  const Tensor<T> noisy = q_sample(u0, out.timesteps, eps, sched);
  std::vector<int> t_index(out.timesteps.size());
  for (std::size_t b = 0; b < t_index.size(); ++b)
    t_index[b] = sched.timesteps[out.timesteps[b] - 1] - 1;
  out.loss = mse_loss(model(noisy, t_index, cond), eps);
  return out;
}

template <class T>
Tensor<T> combine_guidance(const Tensor<T>& eps_cond, const Tensor<T>& eps_uncond, double scale) {
  if (eps_cond.shape() != eps_uncond.shape())
    throw ShapeError("guidance: conditional and unconditional predictions differ in shape");
  if (scale == 1.0) return eps_cond.detach();
  if (scale == 0.0) return eps_uncond.detach();
  const T s = static_cast<T>(scale);
  const auto c = eps_cond.data();
  const auto u = eps_uncond.data();
  std::vector<T> out(c.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = u[i] + s * (c[i] - u[i]);
  return Tensor<T>::from(eps_cond.shape(), std::move(out));
}

template <class T>
Tensor<T> guided_eps(const EpsModel<T>& model, const Tensor<T>& u_t, std::span<const int> t_index,
                     const std::vector<TokenIds>& tokens, const std::vector<TokenIds>& null_tokens,
                     double scale) {
  if (!(scale >= 0.0)) throw ConfigError("guidance scale must be >= 0");
  if (scale == 1.0) return model(u_t, t_index, tokens);
  if (scale == 0.0) return model(u_t, t_index, null_tokens);
  // Both branches in one batch: [cond; uncond].
  const auto batch = u_t.dim(0);
  const std::int64_t per = u_t.numel() / batch;
  std::vector<T> both(static_cast<std::size_t>(2 * u_t.numel()));
  std::copy(u_t.data().begin(), u_t.data().end(), both.begin());
  std::copy(u_t.data().begin(), u_t.data().end(), both.begin() + u_t.numel());
  Shape shape2 = u_t.shape();
  shape2[0] = 2 * batch;
  std::vector<int> t2(t_index.begin(), t_index.end());
  t2.insert(t2.end(), t_index.begin(), t_index.end());
  std::vector<TokenIds> tok2 = tokens;
  tok2.insert(tok2.end(), null_tokens.begin(), null_tokens.end());
  const Tensor<T> eps = model(Tensor<T>::from(shape2, std::move(both)), t2, tok2);
  const auto e = eps.data();
  const Tensor<T> cond =
      Tensor<T>::from(u_t.shape(), std::vector<T>(e.begin(), e.begin() + batch * per));
  const Tensor<T> uncond =
      Tensor<T>::from(u_t.shape(), std::vector<T>(e.begin() + batch * per, e.end()));
  return combine_guidance(cond, uncond, scale);
}

template <class T>
Tensor<T> ddpm_step(const Tensor<T>& u_t, int t, const Tensor<T>& eps_hat,
                    const NoiseSchedule& sched, Rng& rng, ReverseVariance variance) {
  check_step(sched, t, "ddpm_step");
  if (u_t.shape() != eps_hat.shape()) throw ShapeError("ddpm_step: eps_hat shape mismatch");
  eps_hat.validate_finite("ddpm_step eps_hat");
  const double beta = sched.beta(t);
  const T eps_coef = static_cast<T>(beta / sched.sigma(t));
  const T mean_coef = static_cast<T>(1.0 / std::sqrt(1.0 - beta));
  const auto x = u_t.data();
  const auto e = eps_hat.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[i] - eps_coef * e[i]) * mean_coef;
  if (t > 1) {
    const double var = variance == ReverseVariance::posterior
                           ? sched.posterior_variances[static_cast<std::size_t>(t - 1)]
                           : beta;
    const T noise_coef = static_cast<T>(std::sqrt(var));
    std::vector<T> z(out.size());
    rng.fill_normal(std::span<T>(z));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + noise_coef * z[i];
  }
  return Tensor<T>::from(u_t.shape(), std::move(out));
}

template <class T>
SampleResult<T> run_sampler(const EpsModel<T>& model, const NoiseSchedule& sched,
                            const SamplerConfig& cfg, const std::vector<TokenIds>& tokens,
                            const std::vector<TokenIds>& null_tokens, const Shape& shape) {
  NoGradGuard no_grad;
  const auto batch = shape.at(0);
  if (static_cast<std::int64_t>(tokens.size()) != batch ||
      static_cast<std::int64_t>(null_tokens.size()) != batch)
    throw ShapeError("sample: one token sequence per sample required");
  Rng rng(cfg.seed);
  SampleResult<T> res;
  Tensor<T> x = Tensor<T>::randn(shape, rng);
  if (cfg.keep_trajectory) res.trajectory.push_back(x);
  std::vector<int> t_index(static_cast<std::size_t>(batch));
  for (int t = sched.steps; t >= 1; --t) {
    std::fill(t_index.begin(), t_index.end(), sched.timesteps[t - 1] - 1);
    const Tensor<T> eps = guided_eps(model, x, t_index, tokens, null_tokens, cfg.guidance_scale);
    x = ddpm_step(x, t, eps, sched, rng, cfg.variance);
    x.validate_finite("sampler state");
    if (cfg.keep_trajectory) res.trajectory.push_back(x);
  }
  res.latents = x;
  return res;
}

template <class T>
SampleResult<T> sample(const EpsModel<T>& model, const NoiseSchedule& sched,
                       const SamplerConfig& cfg, const std::vector<TokenIds>& tokens,
                       const std::vector<TokenIds>& null_tokens, const Shape& shape) {
  return run_sampler(model, respace(sched, cfg.steps), cfg, tokens, null_tokens, shape);
}

#define LSHIFT_INSTANTIATE(T)                                                                      \
  template Tensor<T> q_sample(const Tensor<T>&, std::span<const int>, const Tensor<T>&,            \
                              const NoiseSchedule&);                                               \
  template LossSample<T> training_loss(const Tensor<T>&, const std::vector<TokenIds>&,             \
                                       const NoiseSchedule&, const EpsModel<T>&, Rng&, double,     \
                                       const TokenIds&);                                           \
  template Tensor<T> combine_guidance(const Tensor<T>&, const Tensor<T>&, double);                 \
  template Tensor<T> guided_eps(const EpsModel<T>&, const Tensor<T>&, std::span<const int>,        \
                                const std::vector<TokenIds>&, const std::vector<TokenIds>&,        \
                                double);                                                           \
  template Tensor<T> ddpm_step(const Tensor<T>&, int, const Tensor<T>&, const NoiseSchedule&,      \
                               Rng&, ReverseVariance);                                             \
  template SampleResult<T> run_sampler(const EpsModel<T>&, const NoiseSchedule&,                   \
                                       const SamplerConfig&, const std::vector<TokenIds>&,         \
                                       const std::vector<TokenIds>&, const Shape&);                \
  template SampleResult<T> sample(const EpsModel<T>&, const NoiseSchedule&, const SamplerConfig&,  \
                                  const std::vector<TokenIds>&, const std::vector<TokenIds>&,      \
                                  const Shape&);

LSHIFT_INSTANTIATE(float)
LSHIFT_INSTANTIATE(double)

#undef LSHIFT_INSTANTIATE

}  // namespace lshift
