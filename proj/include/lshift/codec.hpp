#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lshift/optim.hpp"
#include "lshift/params.hpp"
#include "lshift/tensor.hpp"

namespace lshift {

enum class CodecMode : std::uint8_t { ortho, learned };

struct CodecConfig {
  int factor = 2;
  CodecMode mode = CodecMode::ortho;
  int learned_channels = 4;
  int hidden_channels = 32;

  /// Latent channel count: 3 * factor^2 in ortho mode.
  int latent_channels() const;
  void validate() const;
};

/// Space-to-depth on (B,F,3,H,W): latent channel ch*f*f + dy*f + dx at (y, x)
/// holds pixel (ch, y*f + dy, x*f + dx). A permutation, so exactly invertible.
template <class T>
Tensor<T> ortho_encode(const Tensor<T>& video, int factor);
template <class T>
Tensor<T> ortho_decode(const Tensor<T>& latents, int factor);

/// Registers codec.enc.* and codec.dec.* for the learned mode.
void init_codec_params(ParamStore<float>& params, const CodecConfig& cfg, Rng& rng);

/// Learned encoder on (N,3,H,W) frames -> (N,c,H/f,W/f); differentiable.
Tensor<float> learned_encode_frames(const ParamStore<float>& params, const CodecConfig& cfg,
                                    const Tensor<float>& frames);
/// Learned decoder on (N,c,h,w) latents -> (N,3,h*f,w*f); differentiable.
Tensor<float> learned_decode_frames(const ParamStore<float>& params, const CodecConfig& cfg,
                                    const Tensor<float>& latents);

/// Frame-wise codec over (B,F,...) videos. `params` is only read in learned mode.
class LatentCodec {
 public:
  explicit LatentCodec(CodecConfig cfg, ParamStore<float> params = {});

  Tensor<float> encode(const Tensor<float>& video) const;
  Tensor<float> decode(const Tensor<float>& latents) const;

  const CodecConfig& config() const { return cfg_; }
  const ParamStore<float>& params() const { return params_; }
  ParamStore<float>& params() { return params_; }

 private:
  CodecConfig cfg_;
  ParamStore<float> params_;
};

struct CodecTrainConfig {
  int steps = 500;
  int batch_frames = 32;
  double lr = 2e-3;
  std::uint64_t seed = 0;
};

/// Reconstruction-MSE training of a learned codec on frames supplied by
/// `next_frames(step)` as (N,3,H,W). Returns the per-step loss history.
/// Throws NumericError on a non-finite loss.
std::vector<double> train_tiny_autoencoder(
    ParamStore<float>& params, const CodecConfig& cfg, const CodecTrainConfig& train,
    const std::function<Tensor<float>(int step)>& next_frames);

}  // namespace lshift
