#pragma once

// Reference implementations for tests. Everything here works on plain
// std::vector<double> buffers and is written without calling the library
// routines it is used to check.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace lshift {
struct NoiseSchedule;
}

namespace lshift::testkit {

using Dims = std::vector<std::int64_t>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     std::vector<double> x, double step = 1e-4);

/// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor).
double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                     double floor = 1e-10);

/// Per-index transcription of the frame shift on a (B,F,C,H,W) buffer.
std::vector<double> naive_temporal_shift(const std::vector<double>& z, const Dims& shape, int fold);

/// Six-loop cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw), zero padding.
std::vector<double> naive_conv2d(const std::vector<double>& x, const Dims& x_shape,
                                 const std::vector<double>& k, const Dims& k_shape,
                                 const std::vector<double>& bias, int stride, int pad_top,
                                 int pad_left, int pad_bottom, int pad_right, Dims* out_shape);

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double std_error = 0.0;
  std::int64_t count = 0;
};

Moments moments(const std::vector<double>& samples);

/// True when |m.mean - mean| <= sigmas * m.std_error.
bool mean_within(const Moments& m, double mean, double sigmas = 3.0);
/// True when |m.variance - variance| <= rel * variance.
bool variance_within(const Moments& m, double variance, double rel = 0.05);

/// Reverse process with a model that predicts zero noise, on a schedule
/// respaced to `kept` steps: every step multiplies by 1/sqrt(1 - beta) and,
/// except the last, adds sqrt(var) * z. Normals come from Rng(seed) in the
/// same order as the sampler (initial noise first, then one draw per step).
std::vector<double> closed_form_zero_model_sample(const NoiseSchedule& base, int kept,
                                                  std::uint64_t seed, std::int64_t count,
                                                  bool posterior_variance = true);

}  // namespace lshift::testkit
