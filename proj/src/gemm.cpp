#include "lshift/gemm.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace lshift {
namespace {

// Blocking: B is packed into KC x NC panels (zero-padded to NC columns) and
// each panel is swept by micro-tiles of up to kMaxRows rows. Partial sums
// between k-blocks are kept in a scratch buffer at full precision, so every
// output element sees one FMA chain in increasing k order.
constexpr std::int64_t kMaxRows = 6;
constexpr std::int64_t kBlockK = 256;

#if defined(__AVX512F__)

template <class T>
struct Simd;

template <>
struct Simd<float> {
  using reg = __m512;
  static constexpr int width = 16;
  static reg zero() { return _mm512_setzero_ps(); }
  static reg load(const float* p) { return _mm512_loadu_ps(p); }
  static reg bcast(float v) { return _mm512_set1_ps(v); }
  static reg fma(reg a, reg b, reg c) { return _mm512_fmadd_ps(a, b, c); }
  static void store(float* p, reg v) { _mm512_storeu_ps(p, v); }
  static void store_lanes(float* p, reg v, int lanes, bool accumulate) {
    const auto mask = static_cast<__mmask16>((1u << lanes) - 1u);
    if (accumulate) v = _mm512_add_ps(_mm512_maskz_loadu_ps(mask, p), v);
    _mm512_mask_storeu_ps(p, mask, v);
  }
};

template <>
struct Simd<double> {
  using reg = __m512d;
  static constexpr int width = 8;
  static reg zero() { return _mm512_setzero_pd(); }
  static reg load(const double* p) { return _mm512_loadu_pd(p); }
  static reg bcast(double v) { return _mm512_set1_pd(v); }
  static reg fma(reg a, reg b, reg c) { return _mm512_fmadd_pd(a, b, c); }
  static void store(double* p, reg v) { _mm512_storeu_pd(p, v); }
  static void store_lanes(double* p, reg v, int lanes, bool accumulate) {
    const auto mask = static_cast<__mmask8>((1u << lanes) - 1u);
    if (accumulate) v = _mm512_add_pd(_mm512_maskz_loadu_pd(mask, p), v);
    _mm512_mask_storeu_pd(p, mask, v);
  }
};

template <class T>
constexpr std::int64_t panel_cols() {
  return 4 * Simd<T>::width;
}

struct TileArgs {
  std::int64_t kc;
  std::int64_t a_row_stride, a_col_stride;
  std::int64_t ldc;
  int cols;
  bool resume;  // start from the partial sums instead of zero
  bool finish;  // write C instead of partial sums
  bool accumulate;
};

template <class T, int Rows>
void micro_tile(const TileArgs& t, const T* a, const T* bpack, T* part, T* c) {
  using V = Simd<T>;
  constexpr int W = V::width;
  constexpr std::int64_t NC = panel_cols<T>();
  typename V::reg acc[Rows][4];
  for (int r = 0; r < Rows; ++r)
    for (int q = 0; q < 4; ++q) acc[r][q] = t.resume ? V::load(part + r * NC + q * W) : V::zero();
  for (std::int64_t p = 0; p < t.kc; ++p) {
    const T* bp = bpack + p * NC;
    const auto b0 = V::load(bp), b1 = V::load(bp + W), b2 = V::load(bp + 2 * W),
               b3 = V::load(bp + 3 * W);
    const T* ap = a + p * t.a_col_stride;
    for (int r = 0; r < Rows; ++r) {
      const auto av = V::bcast(ap[r * t.a_row_stride]);
      acc[r][0] = V::fma(av, b0, acc[r][0]);
      acc[r][1] = V::fma(av, b1, acc[r][1]);
      acc[r][2] = V::fma(av, b2, acc[r][2]);
      acc[r][3] = V::fma(av, b3, acc[r][3]);
    }
  }
  for (int r = 0; r < Rows; ++r)
    for (int q = 0; q < 4; ++q) {
      if (!t.finish) {
        V::store(part + r * NC + q * W, acc[r][q]);
        continue;
      }
      const int lanes = std::clamp(t.cols - q * W, 0, W);
      if (lanes > 0) V::store_lanes(c + r * t.ldc + q * W, acc[r][q], lanes, t.accumulate);
    }
}

#else

template <class T>
constexpr std::int64_t panel_cols() {
  return 16;
}

struct TileArgs {
  std::int64_t kc;
  std::int64_t a_row_stride, a_col_stride;
  std::int64_t ldc;
  int cols;
  bool resume;
  bool finish;
  bool accumulate;
};

// Portable kernel with the same per-element accumulation order.
template <class T, int Rows>
void micro_tile(const TileArgs& t, const T* a, const T* bpack, T* part, T* c) {
  constexpr std::int64_t NC = panel_cols<T>();
  for (int r = 0; r < Rows; ++r)
    for (std::int64_t j = 0; j < NC; ++j) {
      T acc = t.resume ? part[r * NC + j] : T(0);
      for (std::int64_t p = 0; p < t.kc; ++p)
        acc = std::fma(a[r * t.a_row_stride + p * t.a_col_stride], bpack[p * NC + j], acc);
      if (!t.finish)
        part[r * NC + j] = acc;
      else if (j < t.cols)
        c[r * t.ldc + j] = t.accumulate ? c[r * t.ldc + j] + acc : acc;
    }
}

#endif

template <class T>
void run_tile(int rows, const TileArgs& t, const T* a, const T* bpack, T* part, T* c) {
  switch (rows) {
    case 6: micro_tile<T, 6>(t, a, bpack, part, c); break;
    case 5: micro_tile<T, 5>(t, a, bpack, part, c); break;
    case 4: micro_tile<T, 4>(t, a, bpack, part, c); break;
    case 3: micro_tile<T, 3>(t, a, bpack, part, c); break;
    case 2: micro_tile<T, 2>(t, a, bpack, part, c); break;
    default: micro_tile<T, 1>(t, a, bpack, part, c); break;
  }
}

// Element (p, j) of op(B) lives at b[p * brs + j * bcs].
template <class T>
void pack_panel(const T* b, std::int64_t brs, std::int64_t bcs, std::int64_t p0, std::int64_t kc,
                std::int64_t j0, std::int64_t jc, T* out) {
  constexpr std::int64_t NC = panel_cols<T>();
  std::fill(out, out + kc * NC, T(0));
  if (bcs == 1) {
    for (std::int64_t p = 0; p < kc; ++p) std::copy_n(b + (p0 + p) * brs + j0, jc, out + p * NC);
  } else {
    for (std::int64_t j = 0; j < jc; ++j) {
      const T* src = b + (j0 + j) * bcs + p0 * brs;
      for (std::int64_t p = 0; p < kc; ++p) out[p * NC + j] = src[p * brs];
    }
  }
}

template <class T>
void gemm_strided(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t ars,
                  std::int64_t acs, const T* b, std::int64_t brs, std::int64_t bcs, T* c,
                  bool accumulate) {
  constexpr std::int64_t NC = panel_cols<T>();
  thread_local std::vector<T> bpack;
  thread_local std::vector<T> part;
  bpack.resize(static_cast<std::size_t>(kBlockK * NC));
  if (k > kBlockK) part.resize(static_cast<std::size_t>(m * NC));
  for (std::int64_t j0 = 0; j0 < n; j0 += NC) {
    const std::int64_t jc = std::min(NC, n - j0);
    for (std::int64_t p0 = 0; p0 < k; p0 += kBlockK) {
      const std::int64_t kc = std::min(kBlockK, k - p0);
      pack_panel(b, brs, bcs, p0, kc, j0, jc, bpack.data());
      TileArgs t{kc, ars, acs, n, static_cast<int>(jc), p0 > 0, p0 + kc == k, accumulate};
      for (std::int64_t i0 = 0; i0 < m; i0 += kMaxRows) {
        const int rows = static_cast<int>(std::min(kMaxRows, m - i0));
        run_tile(rows, t, a + i0 * ars + p0 * acs, bpack.data(),
                 part.empty() ? nullptr : part.data() + i0 * NC, c + i0 * n + j0);
      }
    }
  }
}

}  // namespace

template <class T>
void gemm(bool transpose_a, bool transpose_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T(0));
    return;
  }
  const std::int64_t ars = transpose_a ? 1 : k, acs = transpose_a ? m : 1;
  const std::int64_t brs = transpose_b ? 1 : n, bcs = transpose_b ? k : 1;
  gemm_strided(m, n, k, a, ars, acs, b, brs, bcs, c, accumulate);
}

template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const double*,
                           const double*, double*, bool);

}  // namespace lshift
