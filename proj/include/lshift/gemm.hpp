#pragma once

#include <cstdint>

namespace lshift {

/// C = op(A) * op(B) (+ C when `accumulate`), all row-major and contiguous.
///
/// op(A) is M x K and op(B) is K x N. Each output element accumulates its K
/// products in increasing k order with fused multiply-add, starting from zero,
/// so results are bitwise reproducible and independent of blocking.
template <class T>
void gemm(bool transpose_a, bool transpose_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const T* a, const T* b, T* c, bool accumulate);

}  // namespace lshift
