#pragma once

#include <cstdint>

#include "lshift/diffusion.hpp"
#include "lshift/params.hpp"
#include "lshift/text.hpp"
#include "lshift/unet.hpp"

namespace lshift {

struct ModelConfig {
  UNetConfig unet;
  int max_tokens = kDefaultMaxTokens;
};

/// Fresh text.* and unet.* parameters drawn from Rng(seed).
template <class T>
ParamStore<T> init_model_params(const ModelConfig& cfg, std::uint64_t seed);

/// Noise predictor reading weights from `params` at call time. Both
/// referenced objects must outlive the returned function.
template <class T>
EpsModel<T> make_eps_model(const UNet<T>& net, const ParamStore<T>& params);

}  // namespace lshift
