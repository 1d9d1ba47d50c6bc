#include "lshift/testkit/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include "lshift/diffusion.hpp"
#include "lshift/rng.hpp"

namespace lshift::testkit {

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double max_rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  if (a.size() != b.size()) throw std::invalid_argument("max_rel_error: size mismatch");
  double diff = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

std::vector<double> naive_temporal_shift(const std::vector<double>& z, const Dims& shape, int fold) {
  if (shape.size() != 5) throw std::invalid_argument("naive_temporal_shift: rank 5 expected");
  const std::int64_t B = shape[0], F = shape[1], C = shape[2], H = shape[3], W = shape[4];
  if (fold < 2 || C < fold) throw std::invalid_argument("naive_temporal_shift: bad fold");
  const std::int64_t part = C / fold;
  auto at = [&](std::int64_t b, std::int64_t f, std::int64_t c, std::int64_t h, std::int64_t w) {
    return (((b * F + f) * C + c) * H + h) * W + w;
  };
  std::vector<double> out(z.size(), 0.0);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t f = 0; f < F; ++f)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t w = 0; w < W; ++w) {
            std::int64_t src = f;
            if (c < part)
              src = f - 1;
            else if (c >= C - part)
              src = f + 1;
            out[at(b, f, c, h, w)] = (src < 0 || src >= F) ? 0.0 : z[at(b, src, c, h, w)];
          }
  return out;
}

std::vector<double> naive_conv2d(const std::vector<double>& x, const Dims& xs,
                                 const std::vector<double>& k, const Dims& ks,
                                 const std::vector<double>& bias, int stride, int pad_top,
                                 int pad_left, int pad_bottom, int pad_right, Dims* out_shape) {
  const std::int64_t N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  const std::int64_t Co = ks[0], kh = ks[2], kw = ks[3];
  const std::int64_t Ho = (H + pad_top + pad_bottom - kh) / stride + 1;
  const std::int64_t Wo = (W + pad_left + pad_right - kw) / stride + 1;
  if (out_shape) *out_shape = {N, Co, Ho, Wo};
  std::vector<double> out(static_cast<std::size_t>(N * Co * Ho * Wo));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < Co; ++o)
      for (std::int64_t i = 0; i < Ho; ++i)
        for (std::int64_t j = 0; j < Wo; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::int64_t c = 0; c < Ci; ++c)
            for (std::int64_t p = 0; p < kh; ++p)
              for (std::int64_t q = 0; q < kw; ++q) {
                const std::int64_t y = i * stride + p - pad_top, xx = j * stride + q - pad_left;
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                acc += x[((n * Ci + c) * H + y) * W + xx] * k[((o * Ci + c) * kh + p) * kw + q];
              }
          out[((n * Co + o) * Ho + i) * Wo + j] = acc;
        }
  return out;
}

Moments moments(const std::vector<double>& s) {
  Moments m;
  m.count = static_cast<std::int64_t>(s.size());
  if (s.size() < 2) throw std::invalid_argument("moments: need at least two samples");
  double sum = 0.0;
  for (double v : s) sum += v;
  m.mean = sum / static_cast<double>(s.size());
  double ss = 0.0;
  for (double v : s) ss += (v - m.mean) * (v - m.mean);
  m.variance = ss / static_cast<double>(s.size() - 1);
  m.std_error = std::sqrt(m.variance / static_cast<double>(s.size()));
  return m;
}

bool mean_within(const Moments& m, double mean, double sigmas) {
  return std::abs(m.mean - mean) <= sigmas * m.std_error;
}

bool variance_within(const Moments& m, double variance, double rel) {
  return std::abs(m.variance - variance) <= rel * variance;
}

std::vector<double> closed_form_zero_model_sample(const NoiseSchedule& base, int kept,
                                                  std::uint64_t seed, std::int64_t count,
                                                  bool posterior_variance) {
  const int T = static_cast<int>(base.betas.size());
  if (kept < 1 || kept > T) throw std::invalid_argument("closed_form: bad step count");
  // Retained steps and their effective betas / cumulative products.
  std::vector<double> abar(static_cast<std::size_t>(kept) + 1, 1.0), beta(static_cast<std::size_t>(kept));
  int prev = 0;
  for (int i = 1; i <= kept; ++i) {
    const int t = static_cast<int>(static_cast<std::int64_t>(i) * T / kept);
    abar[i] = base.alpha_bars[t];
    beta[i - 1] = t == prev + 1 ? base.betas[t - 1] : 1.0 - base.alpha_bars[t] / base.alpha_bars[prev];
    prev = t;
  }
  Rng rng(seed);
  std::vector<double> x(static_cast<std::size_t>(count));
  rng.fill_normal(std::span<double>(x));
  std::vector<double> z(x.size());
  for (int i = kept; i >= 1; --i) {
    const double b = beta[i - 1];
    const double shrink = 1.0 / std::sqrt(1.0 - b);
    for (auto& v : x) v = v * shrink;
    if (i == 1) break;
    const double var = posterior_variance ? (1.0 - abar[i - 1]) / (1.0 - abar[i]) * b : b;
    const double sd = std::sqrt(var);
    rng.fill_normal(std::span<double>(z));
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = x[j] + sd * z[j];
  }
  return x;
}

}  // namespace lshift::testkit
