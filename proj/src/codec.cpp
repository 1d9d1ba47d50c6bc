#include "lshift/codec.hpp"

#include <cmath>
#include <string>

namespace lshift {

int CodecConfig::latent_channels() const {
  return mode == CodecMode::ortho ? 3 * factor * factor : learned_channels;
}

void CodecConfig::validate() const {
  if (factor != 2 && factor != 4 && factor != 8)
    throw ConfigError("codec factor must be 2, 4 or 8, got " + std::to_string(factor));
  if (mode == CodecMode::learned && (learned_channels < 1 || hidden_channels < 1))
    throw ConfigError("learned codec channel counts must be positive");
}

namespace {

void check_video(const Shape& s, int factor, std::int64_t channels, const char* what) {
  if (s.size() != 5) throw ShapeError(std::string(what) + ": expected rank 5, got " + shape_str(s));
  if (s[2] != channels)
    throw ShapeError(std::string(what) + ": expected " + std::to_string(channels) +
                     " channels, got " + shape_str(s));
  if (s[3] % factor != 0 || s[4] % factor != 0)
    throw ShapeError(std::string(what) + ": spatial size " + shape_str(s) +
                     " not divisible by factor " + std::to_string(factor));
}

// Walks the pixel/latent correspondence, calling fn(pixel_index, latent_index).
template <class Fn>
void for_each_block(std::int64_t frames, std::int64_t h, std::int64_t w, int f, Fn fn) {
  const std::int64_t hh = h / f, ww = w / f, c = 3LL * f * f;
  for (std::int64_t n = 0; n < frames; ++n)
    for (std::int64_t ch = 0; ch < 3; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t lc = ch * f * f + (y % f) * f + (x % f);
          fn(((n * 3 + ch) * h + y) * w + x, ((n * c + lc) * hh + y / f) * ww + x / f);
        }
}

Tensor<float> conv_param(ParamStore<float>& p, const std::string& name, std::int64_t out,
                         std::int64_t in, int k, Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  auto w = scale(Tensor<float>::randn({out, in, k, k}, rng), static_cast<float>(std)).detach();
  p.add(name + ".bias", Tensor<float>::zeros({out}));
  return p.add(name + ".weight", w);
}

Tensor<float> conv(const ParamStore<float>& p, const std::string& name, const Tensor<float>& x,
                   Conv2dOptions opts) {
  return conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), opts);
}

int levels(int factor) { return factor == 2 ? 1 : factor == 4 ? 2 : 3; }

}  // namespace

template <class T>
Tensor<T> ortho_encode(const Tensor<T>& video, int factor) {
  check_video(video.shape(), factor, 3, "ortho_encode");
  const auto& s = video.shape();
  const auto in = video.data();
  std::vector<T> out(in.size());
  for_each_block(s[0] * s[1], s[3], s[4], factor,
                 [&](std::int64_t p, std::int64_t l) { out[l] = in[p]; });
  return Tensor<T>::from({s[0], s[1], 3LL * factor * factor, s[3] / factor, s[4] / factor},
                         std::move(out));
}

template <class T>
Tensor<T> ortho_decode(const Tensor<T>& latents, int factor) {
  const auto& s = latents.shape();
  if (s.size() != 5) throw ShapeError("ortho_decode: expected rank 5, got " + shape_str(s));
  if (s[2] != 3LL * factor * factor)
    throw ShapeError("ortho_decode: expected " + std::to_string(3 * factor * factor) +
                     " channels, got " + shape_str(s));
  const auto in = latents.data();
  std::vector<T> out(in.size());
  for_each_block(s[0] * s[1], s[3] * factor, s[4] * factor, factor,
                 [&](std::int64_t p, std::int64_t l) { out[p] = in[l]; });
  return Tensor<T>::from({s[0], s[1], 3, s[3] * factor, s[4] * factor}, std::move(out));
}

void init_codec_params(ParamStore<float>& p, const CodecConfig& cfg, Rng& rng) {
  cfg.validate();
  const int hid = cfg.hidden_channels, c = cfg.learned_channels;
  conv_param(p, "codec.enc.in", hid, 3, 3, rng);
  for (int i = 0; i < levels(cfg.factor); ++i)
    conv_param(p, "codec.enc.down" + std::to_string(i), hid, hid, 3, rng);
  conv_param(p, "codec.enc.out", c, hid, 1, rng);
  conv_param(p, "codec.dec.in", hid, c, 1, rng);
  for (int i = 0; i < levels(cfg.factor); ++i)
    conv_param(p, "codec.dec.up" + std::to_string(i), hid, hid, 3, rng);
  conv_param(p, "codec.dec.out", 3, hid, 3, rng);
}

Tensor<float> learned_encode_frames(const ParamStore<float>& p, const CodecConfig& cfg,
                                    const Tensor<float>& frames) {
  Tensor<float> h = silu(conv(p, "codec.enc.in", frames, Conv2dOptions::same(1, 1)));
  for (int i = 0; i < levels(cfg.factor); ++i)
    h = silu(conv(p, "codec.enc.down" + std::to_string(i), h, {2, 0, 0, 1, 1}));
  return conv(p, "codec.enc.out", h, {});
}

Tensor<float> learned_decode_frames(const ParamStore<float>& p, const CodecConfig& cfg,
                                    const Tensor<float>& latents) {
  Tensor<float> h = silu(conv(p, "codec.dec.in", latents, {}));
  for (int i = 0; i < levels(cfg.factor); ++i)
    h = silu(conv(p, "codec.dec.up" + std::to_string(i), upsample_nearest(h, 2),
                  Conv2dOptions::same(1, 1)));
  return conv(p, "codec.dec.out", h, Conv2dOptions::same(1, 1));
}

LatentCodec::LatentCodec(CodecConfig cfg, ParamStore<float> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
}

Tensor<float> LatentCodec::encode(const Tensor<float>& video) const {
  if (cfg_.mode == CodecMode::ortho) return ortho_encode(video, cfg_.factor);
  check_video(video.shape(), cfg_.factor, 3, "encode");
  const auto& s = video.shape();
  NoGradGuard guard;
  const auto z = learned_encode_frames(params_, cfg_, video.reshape({s[0] * s[1], 3, s[3], s[4]}));
  return z.reshape({s[0], s[1], z.dim(1), z.dim(2), z.dim(3)}).detach();
}

Tensor<float> LatentCodec::decode(const Tensor<float>& latents) const {
  if (cfg_.mode == CodecMode::ortho) return ortho_decode(latents, cfg_.factor);
  const auto& s = latents.shape();
  if (s.size() != 5 || s[2] != cfg_.learned_channels)
    throw ShapeError("decode: expected (B,F," + std::to_string(cfg_.learned_channels) +
                     ",h,w), got " + shape_str(s));
  NoGradGuard guard;
  const auto x =
      learned_decode_frames(params_, cfg_, latents.reshape({s[0] * s[1], s[2], s[3], s[4]}));
  return x.reshape({s[0], s[1], 3, x.dim(2), x.dim(3)}).detach();
}

std::vector<double> train_tiny_autoencoder(
    ParamStore<float>& params, const CodecConfig& cfg, const CodecTrainConfig& train,
    const std::function<Tensor<float>(int step)>& next_frames) {
  if (cfg.mode != CodecMode::learned) throw ConfigError("train_tiny_autoencoder needs learned mode");
  AdamState<float> state;
  const AdamConfig adam{train.lr, 0.9, 0.999, 1e-8};
  std::vector<double> history;
  for (int step = 0; step < train.steps; ++step) {
    const Tensor<float> frames = next_frames(step);
    params.zero_grad();
    const auto recon = learned_decode_frames(params, cfg, learned_encode_frames(params, cfg, frames));
    const auto loss = mse_loss(recon, frames);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw NumericError("codec training diverged at step " + std::to_string(step));
    loss.backward();
    adam_step(params, state, adam);
    history.push_back(value);
  }
  return history;
}

template Tensor<float> ortho_encode(const Tensor<float>&, int);
template Tensor<double> ortho_encode(const Tensor<double>&, int);
template Tensor<float> ortho_decode(const Tensor<float>&, int);
template Tensor<double> ortho_decode(const Tensor<double>&, int);

}  // namespace lshift
