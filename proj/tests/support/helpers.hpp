#pragma once

#include <functional>
#include <vector>

#include "lshift/params.hpp"
#include "lshift/rng.hpp"
#include "lshift/unet.hpp"
#include "lshift/tensor.hpp"
#include "lshift/testkit/oracles.hpp"

namespace lshift::test {

using LossFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Owning copy, safe to iterate over temporaries.
template <class T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

inline std::vector<double> to_vec(const Tensor<double>& t) {
  return {t.data().begin(), t.data().end()};
}

inline Tensor<double> random_leaf(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  auto t = Tensor<double>::randn(std::move(shape), rng);
  for (auto& v : t.mutable_data()) v *= scale;
  return t;
}

/// Largest relative error between autodiff and central differences over
/// every leaf of `loss`.
inline double grad_check(const LossFn& loss, const std::vector<Tensor<double>>& leaves,
                         double step = 1e-4) {
  std::vector<Tensor<double>> tracked;
  for (const auto& l : leaves) {
    auto t = l.detach();
    t.set_requires_grad(true);
    tracked.push_back(t);
  }
  loss(tracked).backward();
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto f = [&](const std::vector<double>& x) {
      NoGradGuard guard;
      std::vector<Tensor<double>> args;
      for (std::size_t j = 0; j < leaves.size(); ++j)
        args.push_back(j == i ? Tensor<double>::from(leaves[j].shape(), x) : leaves[j].detach());
      return loss(args).item();
    };
    const auto fd = testkit::finite_diff_grad(f, to_vec(leaves[i]), step);
    worst = std::max(worst, testkit::max_rel_error(to_vec(tracked[i].grad_tensor()), fd));
  }
  return worst;
}

/// Fixed weighted sum that turns any tensor into a scalar with a dense gradient.
inline Tensor<double> probe_sum(const Tensor<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = Tensor<double>::randn(y.shape(), rng);
  return sum(mul(y, w));
}

/// Small U-Net that still has every block type: two levels, a skip
/// projection, attention at the lower level and the mid block.
inline UNetConfig tiny_unet_config() {
  UNetConfig c;
  c.in_channels = 3;
  c.base_channels = 8;
  c.channel_multipliers = {1, 2};
  c.num_res_blocks = 1;
  c.attention_levels = {1};
  c.heads = 2;
  c.context_dim = 6;
  c.mlp_ratio = 2;
  c.norm_groups = 4;
  return c;
}

/// Adds N(0, scale^2) noise to every parameter so no gradient path is
/// blocked by zero initialisation.
inline void perturb(ParamStore<double>& params, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& [name, t] : params.entries())
    for (auto& v : t.mutable_data()) v += scale * rng.normal();
}

}  // namespace lshift::test
