#include "lshift/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lshift {

template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& [name, t] : entries) {
      state.m.emplace_back(static_cast<std::size_t>(t.numel()), T(0));
      state.v.emplace_back(static_cast<std::size_t>(t.numel()), T(0));
    }
  }
  if (state.m.size() != entries.size())
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  for (const auto& [name, t] : entries)
    for (T g : t.grad())
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + name);

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(cfg.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.eps);

  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& t = entries[i].second;
    auto p = t.mutable_data();
    const auto g = t.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) throw std::invalid_argument("adam_step: moment size mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const T gj = g.empty() ? T(0) : g[j];
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      p[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

template <class T>
void ema_update(ParamStore<T>& ema, const ParamStore<T>& params, double decay) {
  if (ema.size() != params.size()) throw std::invalid_argument("ema_update: size mismatch");
  const T d = static_cast<T>(decay);
  const T one_minus = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < ema.size(); ++i) {
    auto e = ema.entries()[i].second.mutable_data();
    const auto w = params.entries()[i].second.data();
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = d * e[j] + one_minus * w[j];
  }
}

double ema_decay_at(double decay, std::int64_t step) {
  return std::min(decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
}

template <class T>
double grad_norm(const ParamStore<T>& params) {
  double acc = 0;
  for (const auto& [name, t] : params.entries())
    for (T g : t.grad()) acc += static_cast<double>(g) * g;
  return std::sqrt(acc);
}

template void adam_step<float>(ParamStore<float>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(ParamStore<double>&, AdamState<double>&, const AdamConfig&);
template void ema_update<float>(ParamStore<float>&, const ParamStore<float>&, double);
template void ema_update<double>(ParamStore<double>&, const ParamStore<double>&, double);
template double grad_norm<float>(const ParamStore<float>&);
template double grad_norm<double>(const ParamStore<double>&);

}  // namespace lshift
