#include "lshift/model.hpp"

namespace lshift {

template <class T>
ParamStore<T> init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.unet.validate();
  if (cfg.max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  Rng rng(seed);
  ParamStore<T> params;
  Rng text_rng = rng.split(1);
  Rng unet_rng = rng.split(2);
  init_text_params(params, cfg.max_tokens, cfg.unet.context_dim, text_rng);
  UNet<T>(cfg.unet).init(params, unet_rng);
  return params;
}

template <class T>
EpsModel<T> make_eps_model(const UNet<T>& net, const ParamStore<T>& params) {
  return [&net, &params](const Tensor<T>& u_t, std::span<const int> t_index,
                         const std::vector<TokenIds>& tokens) {
    return net.forward(params, u_t, t_index, encode_text(params, tokens));
  };
}

template ParamStore<float> init_model_params(const ModelConfig&, std::uint64_t);
template ParamStore<double> init_model_params(const ModelConfig&, std::uint64_t);
template EpsModel<float> make_eps_model(const UNet<float>&, const ParamStore<float>&);
template EpsModel<double> make_eps_model(const UNet<double>&, const ParamStore<double>&);

}  // namespace lshift
