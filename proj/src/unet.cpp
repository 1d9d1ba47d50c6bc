#include "lshift/unet.hpp"

#include <algorithm>
#include <cmath>

namespace lshift {

namespace {

constexpr double kNormEps = 1e-5;

template <class T>
void add_linear(ParamStore<T>& p, const std::string& name, std::int64_t out, std::int64_t in,
                Rng& rng, bool bias = true) {
  const T std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
  p.add(name + ".weight", scale(Tensor<T>::randn({out, in}, rng), std).detach());
  if (bias) p.add(name + ".bias", Tensor<T>::zeros({out}));
}

template <class T>
void add_conv(ParamStore<T>& p, const std::string& name, std::int64_t out, std::int64_t in, int k,
              Rng& rng, bool zero = false) {
  if (zero) {
    p.add(name + ".weight", Tensor<T>::zeros({out, in, k, k}));
  } else {
    const T std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in * k * k)));
    p.add(name + ".weight", scale(Tensor<T>::randn({out, in, k, k}, rng), std).detach());
  }
  p.add(name + ".bias", Tensor<T>::zeros({out}));
}

template <class T>
void add_norm(ParamStore<T>& p, const std::string& name, std::int64_t channels) {
  p.add(name + ".gamma", Tensor<T>::full({channels}, T(1)));
  p.add(name + ".beta", Tensor<T>::zeros({channels}));
}

template <class T>
Tensor<T> lin(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x) {
  const std::string bias = name + ".bias";
  return linear(x, p.at(name + ".weight"), p.contains(bias) ? p.at(bias) : Tensor<T>());
}

template <class T>
Tensor<T> conv(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x,
               Conv2dOptions opts) {
  return conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), opts);
}

// Downsampling pads one extra row/column at the far edge so even sizes halve exactly.
constexpr Conv2dOptions kDown{2, 0, 0, 1, 1};
const Conv2dOptions kSame = Conv2dOptions::same(1, 1);

// (N,S,C) -> (N*heads, S, C/heads)
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  const auto n = x.dim(0), s = x.dim(1), c = x.dim(2);
  return permute(x.reshape({n, s, heads, c / heads}), {0, 2, 1, 3})
      .reshape({n * heads, s, c / heads});
}

template <class T>
Tensor<T> merge_heads(const Tensor<T>& x, int heads) {
  const auto nh = x.dim(0), s = x.dim(1), dh = x.dim(2);
  return permute(x.reshape({nh / heads, heads, s, dh}), {0, 2, 1, 3})
      .reshape({nh / heads, s, heads * dh});
}

}  // namespace

bool UNetConfig::has_attention(int level) const {
  return std::find(attention_levels.begin(), attention_levels.end(), level) !=
         attention_levels.end();
}

void UNetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("unet: " + msg); };
  if (in_channels < 1 || base_channels < 1) fail("channel counts must be positive");
  if (channel_multipliers.empty()) fail("channel_multipliers must not be empty");
  if (num_res_blocks < 1) fail("num_res_blocks must be >= 1");
  if (heads < 1 || context_dim < 1 || mlp_ratio < 1 || norm_groups < 1)
    fail("heads, context_dim, mlp_ratio and norm_groups must be positive");
  for (int m : channel_multipliers)
    if (m < 1) fail("channel multipliers must be positive");
  for (int level : attention_levels) {
    if (level < 0 || level >= levels())
      fail("attention level " + std::to_string(level) + " does not exist");
    if (base_channels * channel_multipliers[level] % heads != 0)
      fail("channels at attention level " + std::to_string(level) + " not divisible by heads");
  }
  const int deepest = base_channels * channel_multipliers.back();
  if (deepest % heads != 0) fail("middle-block channels not divisible by heads");
  // Every normalized width: level outputs and skip concatenations.
  std::vector<int> widths = {base_channels};
  std::vector<int> skips = {base_channels};
  int ch = base_channels;
  for (int l = 0; l < levels(); ++l)
    for (int i = 0; i < num_res_blocks + (l + 1 < levels() ? 1 : 0); ++i) {
      ch = i < num_res_blocks ? base_channels * channel_multipliers[l] : ch;
      skips.push_back(ch);
      widths.push_back(ch);
    }
  for (int l = levels() - 1; l >= 0; --l)
    for (int i = 0; i <= num_res_blocks; ++i) {
      widths.push_back(ch + skips.back());
      skips.pop_back();
      ch = base_channels * channel_multipliers[l];
      widths.push_back(ch);
    }
  for (int w : widths)
    if (w % norm_groups != 0)
      fail("width " + std::to_string(w) + " not divisible by norm_groups=" +
           std::to_string(norm_groups));
  if (use_shift) ShiftConfig{fold}.partition(base_channels);
}

std::vector<double> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw ConfigError("timestep embedding dim must be even and positive, got " + std::to_string(dim));
  if (t < 0) throw ConfigError("timestep must be non-negative");
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

template <class T>
UNet<T>::UNet(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  temporal_ = [fold = cfg_.fold](const Tensor<T>& z) {
    return temporal_shift(z, ShiftConfig{fold});
  };
}

template <class T>
void UNet<T>::init_resblock(ParamStore<T>& p, const std::string& prefix, int in_ch, int out_ch,
                            Rng& rng) const {
  add_norm(p, prefix + ".norm1", in_ch);
  add_conv(p, prefix + ".conv1", out_ch, in_ch, 3, rng);
  add_linear(p, prefix + ".temb", out_ch, cfg_.time_dim(), rng);
  add_norm(p, prefix + ".norm2", out_ch);
  add_conv(p, prefix + ".conv2", out_ch, out_ch, 3, rng);
  if (in_ch != out_ch) add_conv(p, prefix + ".skip", out_ch, in_ch, 1, rng);
}

template <class T>
void UNet<T>::init_transformer(ParamStore<T>& p, const std::string& prefix, int c, Rng& rng) const {
  add_norm(p, prefix + ".norm", c);
  add_linear(p, prefix + ".proj_in", c, c, rng);
  add_norm(p, prefix + ".ln1", c);
  for (const char* m : {".self.q", ".self.k", ".self.v"}) add_linear(p, prefix + m, c, c, rng, false);
  add_linear(p, prefix + ".self.out", c, c, rng);
  add_norm(p, prefix + ".ln2", c);
  add_linear(p, prefix + ".cross.q", c, c, rng, false);
  add_linear(p, prefix + ".cross.k", c, cfg_.context_dim, rng, false);
  add_linear(p, prefix + ".cross.v", c, cfg_.context_dim, rng, false);
  add_linear(p, prefix + ".cross.out", c, c, rng);
  add_norm(p, prefix + ".ln3", c);
  add_linear(p, prefix + ".mlp.fc1", static_cast<std::int64_t>(c) * cfg_.mlp_ratio, c, rng);
  add_linear(p, prefix + ".mlp.fc2", c, static_cast<std::int64_t>(c) * cfg_.mlp_ratio, rng);
  add_linear(p, prefix + ".proj_out", c, c, rng);
}

template <class T>
void UNet<T>::init(ParamStore<T>& p, Rng& rng) const {
  const int b = cfg_.base_channels, td = cfg_.time_dim();
  add_linear(p, "unet.time.fc1", td, b, rng);
  add_linear(p, "unet.time.fc2", td, td, rng);
  add_conv(p, "unet.conv_in", b, cfg_.in_channels, 3, rng);
  std::vector<int> skips = {b};
  int ch = b;
  for (int l = 0; l < cfg_.levels(); ++l) {
    const std::string pre = "unet.down" + std::to_string(l);
    const int out = b * cfg_.channel_multipliers[l];
    for (int i = 0; i < cfg_.num_res_blocks; ++i) {
      init_resblock(p, pre + ".res" + std::to_string(i), ch, out, rng);
      ch = out;
      if (cfg_.has_attention(l)) init_transformer(p, pre + ".attn" + std::to_string(i), ch, rng);
      skips.push_back(ch);
    }
    if (l + 1 < cfg_.levels()) {
      add_conv(p, pre + ".downsample", ch, ch, 3, rng);
      skips.push_back(ch);
    }
  }
  init_resblock(p, "unet.mid.res0", ch, ch, rng);
  init_transformer(p, "unet.mid.attn", ch, rng);
  init_resblock(p, "unet.mid.res1", ch, ch, rng);
  for (int l = cfg_.levels() - 1; l >= 0; --l) {
    const std::string pre = "unet.up" + std::to_string(l);
    const int out = b * cfg_.channel_multipliers[l];
    for (int i = 0; i <= cfg_.num_res_blocks; ++i) {
      init_resblock(p, pre + ".res" + std::to_string(i), ch + skips.back(), out, rng);
      skips.pop_back();
      ch = out;
      if (cfg_.has_attention(l)) init_transformer(p, pre + ".attn" + std::to_string(i), ch, rng);
    }
    if (l > 0) add_conv(p, pre + ".upsample", ch, ch, 3, rng);
  }
  add_norm(p, "unet.out.norm", ch);
  add_conv(p, "unet.out.conv", cfg_.in_channels, ch, 3, rng, true);
}

template <class T>
Tensor<T> UNet<T>::norm(const ParamStore<T>& p, const std::string& prefix, const Tensor<T>& x,
                        int groups) const {
  return group_norm(x, groups, p.at(prefix + ".gamma"), p.at(prefix + ".beta"),
                    static_cast<T>(kNormEps));
}

template <class T>
Tensor<T> UNet<T>::resblock(const ParamStore<T>& p, const std::string& prefix, const Tensor<T>& x,
                            std::int64_t frames, const Tensor<T>& temb_act) const {
  if (x.rank() != 4 || frames < 1 || x.dim(0) % frames != 0)
    throw ShapeError("resblock: expected (B*F,C,H,W) input, got " + shape_str(x.shape()));
  const auto n = x.dim(0), c = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  Tensor<T> h = x;
  if (cfg_.use_shift && temporal_)
    h = temporal_(h.reshape({n / frames, frames, c, hh, ww})).reshape({n, c, hh, ww});
  h = conv(p, prefix + ".conv1", silu(norm(p, prefix + ".norm1", h, cfg_.norm_groups)), kSame);
  h = add_channel_rows(h, lin(p, prefix + ".temb", temb_act));
  h = conv(p, prefix + ".conv2", silu(norm(p, prefix + ".norm2", h, cfg_.norm_groups)), kSame);
  const Tensor<T> skip = p.contains(prefix + ".skip.weight")
                             ? conv(p, prefix + ".skip", x, Conv2dOptions{})
                             : x;
  return add(skip, h);
}

template <class T>
Tensor<T> UNet<T>::attention(const ParamStore<T>& p, const std::string& prefix, const Tensor<T>& x,
                             const Tensor<T>& kv) const {
  const int heads = cfg_.heads;
  const Tensor<T> q = split_heads(lin(p, prefix + ".q", x), heads);
  const Tensor<T> k = split_heads(lin(p, prefix + ".k", kv), heads);
  const Tensor<T> v = split_heads(lin(p, prefix + ".v", kv), heads);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(2))));
  const Tensor<T> weights = softmax(scale(bmm(q, k, false, true), inv_sqrt), 2);
  return lin(p, prefix + ".out", merge_heads(bmm(weights, v), heads));
}

template <class T>
Tensor<T> UNet<T>::transformer(const ParamStore<T>& p, const std::string& prefix,
                               const Tensor<T>& x, const Tensor<T>& context) const {
  if (x.rank() != 4) throw ShapeError("transformer: expected (N,C,H,W), got " + shape_str(x.shape()));
  if (context.rank() != 3 || context.dim(0) != x.dim(0) || context.dim(2) != cfg_.context_dim)
    throw ShapeError("transformer: context " + shape_str(context.shape()) + " does not match (" +
                     std::to_string(x.dim(0)) + ",L," + std::to_string(cfg_.context_dim) + ")");
  const auto n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  auto layer_norm = [&](const std::string& name, const Tensor<T>& t) {
    return norm(p, prefix + name, t.reshape({n * s, c}), 1).reshape({n, s, c});
  };
  const Tensor<T> h = norm(p, prefix + ".norm", x, cfg_.norm_groups);
  Tensor<T> t = lin(p, prefix + ".proj_in", permute(h.reshape({n, c, s}), {0, 2, 1}));
  Tensor<T> a = layer_norm(".ln1", t);
  t = add(t, attention(p, prefix + ".self", a, a));
  t = add(t, attention(p, prefix + ".cross", layer_norm(".ln2", t), context));
  t = add(t, lin(p, prefix + ".mlp.fc2", silu(lin(p, prefix + ".mlp.fc1", layer_norm(".ln3", t)))));
  t = lin(p, prefix + ".proj_out", t);
  return add(x, permute(t, {0, 2, 1}).reshape(x.shape()));
}

template <class T>
Tensor<T> UNet<T>::forward(const ParamStore<T>& p, const Tensor<T>& u_t,
                           std::span<const int> t_index, const Tensor<T>& context) const {
  if (u_t.rank() != 5 || u_t.dim(2) != cfg_.in_channels)
    throw ShapeError("unet: expected (B,F," + std::to_string(cfg_.in_channels) +
                     ",h,w) input, got " + shape_str(u_t.shape()));
  const auto batch = u_t.dim(0), frames = u_t.dim(1), c = u_t.dim(2);
  const auto hh = u_t.dim(3), ww = u_t.dim(4);
  const std::int64_t stride = std::int64_t{1} << (cfg_.levels() - 1);
  if (hh % stride != 0 || ww % stride != 0)
    throw ShapeError("unet: spatial size " + std::to_string(hh) + "x" + std::to_string(ww) +
                     " not divisible by " + std::to_string(stride));
  if (static_cast<std::int64_t>(t_index.size()) != batch)
    throw ShapeError("unet: need one timestep per sample");
  if (context.rank() != 3 || context.dim(0) != batch)
    throw ShapeError("unet: context must be (B,L,d), got " + shape_str(context.shape()));

  const int b = cfg_.base_channels;
  std::vector<T> sinus;
  sinus.reserve(static_cast<std::size_t>(batch * b));
  for (int t : t_index)
    for (double v : timestep_embedding(t, b)) sinus.push_back(static_cast<T>(v));
  const Tensor<T> emb = Tensor<T>::from({batch, b}, std::move(sinus));
  const Tensor<T> temb =
      silu(lin(p, "unet.time.fc2", silu(lin(p, "unet.time.fc1", emb))));
  const Tensor<T> ctx = repeat_batch(context, frames);

  Tensor<T> h = conv(p, "unet.conv_in", u_t.reshape({batch * frames, c, hh, ww}), kSame);
  std::vector<Tensor<T>> skips = {h};
  for (int l = 0; l < cfg_.levels(); ++l) {
    const std::string pre = "unet.down" + std::to_string(l);
    for (int i = 0; i < cfg_.num_res_blocks; ++i) {
      h = resblock(p, pre + ".res" + std::to_string(i), h, frames, temb);
      if (cfg_.has_attention(l)) h = transformer(p, pre + ".attn" + std::to_string(i), h, ctx);
      skips.push_back(h);
    }
    if (l + 1 < cfg_.levels()) {
      h = conv(p, pre + ".downsample", h, kDown);
      skips.push_back(h);
    }
  }
  h = resblock(p, "unet.mid.res0", h, frames, temb);
  h = transformer(p, "unet.mid.attn", h, ctx);
  h = resblock(p, "unet.mid.res1", h, frames, temb);
  for (int l = cfg_.levels() - 1; l >= 0; --l) {
    const std::string pre = "unet.up" + std::to_string(l);
    for (int i = 0; i <= cfg_.num_res_blocks; ++i) {
      h = resblock(p, pre + ".res" + std::to_string(i), concat_channels<T>({h, skips.back()}),
                   frames, temb);
      skips.pop_back();
      if (cfg_.has_attention(l)) h = transformer(p, pre + ".attn" + std::to_string(i), h, ctx);
    }
    if (l > 0) h = conv(p, pre + ".upsample", upsample_nearest(h, 2), kSame);
  }
  h = conv(p, "unet.out.conv", silu(norm(p, "unet.out.norm", h, cfg_.norm_groups)), kSame);
  return h.reshape({batch, frames, c, hh, ww});
}

template class UNet<float>;
template class UNet<double>;

}  // namespace lshift
