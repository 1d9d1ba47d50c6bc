#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lshift/params.hpp"
#include "lshift/rng.hpp"
#include "lshift/shift.hpp"
#include "lshift/tensor.hpp"

namespace lshift {

struct UNetConfig {
  int in_channels = 12;  // also the output channel count
  int base_channels = 32;
  std::vector<int> channel_multipliers = {1, 2};
  int num_res_blocks = 2;
  std::vector<int> attention_levels = {1};
  int heads = 4;
  int context_dim = 64;
  int fold = 3;
  bool use_shift = true;
  int mlp_ratio = 4;
  int norm_groups = 8;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  bool has_attention(int level) const;
  int time_dim() const { return 4 * base_channels; }
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Sinusoidal embedding of timestep `t`: [sin(t w_i) ..., cos(t w_i) ...]
/// with w_i = 10000^(-i / (dim/2)). Throws ConfigError for odd dim.
std::vector<double> timestep_embedding(int t, int dim);

/// Total learnable scalar count.
template <class T>
std::int64_t parameter_count(const ParamStore<T>& params) {
  return params.count();
}

/// Epsilon-prediction U-Net over per-frame latents with frames folded into
/// the batch axis. Weights live in a ParamStore under the "unet." prefix, so
/// one network description serves raw, EMA and f64 copies of the weights.
template <class T>
class UNet {
 public:
  /// Applied to (B,F,C,H,W) features at the start of every residual branch.
  using TemporalModule = std::function<Tensor<T>(const Tensor<T>&)>;

  explicit UNet(UNetConfig cfg);

  const UNetConfig& config() const { return cfg_; }

  /// Registers every unet.* parameter with its initial value.
  void init(ParamStore<T>& params, Rng& rng) const;

  /// u_t (B,F,c,h,w), zero-based timestep per sample, context (B,L,context_dim).
  Tensor<T> forward(const ParamStore<T>& params, const Tensor<T>& u_t, std::span<const int> t_index,
                    const Tensor<T>& context) const;

  /// Residual block on x (B*F,C,H,W); temb_act is silu(time embedding) of shape (B, time_dim).
  Tensor<T> resblock(const ParamStore<T>& params, const std::string& prefix, const Tensor<T>& x,
                     std::int64_t frames, const Tensor<T>& temb_act) const;

  /// Spatial transformer on x (N,C,H,W) with per-sample context (N,L,context_dim).
  Tensor<T> transformer(const ParamStore<T>& params, const std::string& prefix, const Tensor<T>& x,
                        const Tensor<T>& context) const;

  /// Replaces the temporal module; the default is temporal_shift with cfg.fold.
  void set_temporal_module(TemporalModule module) { temporal_ = std::move(module); }

  /// Registers parameters of a single residual block (used for isolated tests).
  void init_resblock(ParamStore<T>& params, const std::string& prefix, int in_ch, int out_ch,
                     Rng& rng) const;
  void init_transformer(ParamStore<T>& params, const std::string& prefix, int channels,
                        Rng& rng) const;

 private:
  Tensor<T> attention(const ParamStore<T>& params, const std::string& prefix, const Tensor<T>& x,
                      const Tensor<T>& kv) const;
  Tensor<T> norm(const ParamStore<T>& params, const std::string& prefix, const Tensor<T>& x,
                 int groups) const;

  UNetConfig cfg_;
  TemporalModule temporal_;
};

}  // namespace lshift
