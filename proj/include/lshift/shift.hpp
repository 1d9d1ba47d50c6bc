#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lshift/tensor.hpp"

namespace lshift {

/// Channel partition for the temporal shift. The first `forward` channels of
/// every frame come from the previous frame, the last `backward` channels from
/// the next frame, and the middle `stay` channels are left in place.
struct ShiftPartition {
  std::int64_t forward = 0;
  std::int64_t stay = 0;
  std::int64_t backward = 0;
};

struct ShiftConfig {
  int fold = 3;

  /// c_fwd = c_bwd = floor(C / fold); the remainder joins the stationary block.
  ShiftPartition partition(std::int64_t channels) const;
};

/// Shifts z (B,F,C,H,W) along the frame axis: output frame i is
/// [z_{i-1}^fwd, z_i^stay, z_{i+1}^bwd] with zeros past either end.
/// Out-of-place and parameter-free; differentiable.
template <class T>
Tensor<T> temporal_shift(const Tensor<T>& z, const ShiftConfig& cfg);

/// Exact adjoint of temporal_shift on raw buffers laid out as (B,F,C,H,W).
template <class T>
std::vector<T> temporal_shift_backward(std::span<const T> grad_out, const Shape& shape,
                                       const ShiftConfig& cfg);

/// Provenance of each channel block of each output frame: the source frame
/// index, or -1 where the block is zero padding. Row i lists (fwd, stay, bwd).
std::vector<std::vector<int>> shift_provenance(int frames);

}  // namespace lshift
