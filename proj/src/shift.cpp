#include "lshift/shift.hpp"

#include <algorithm>
#include <string>

namespace lshift {

ShiftPartition ShiftConfig::partition(std::int64_t channels) const {
  if (fold < 2) throw ConfigError("shift fold must be >= 2, got " + std::to_string(fold));
  if (channels < fold)
    throw ConfigError("temporal shift needs at least fold=" + std::to_string(fold) +
                      " channels, got " + std::to_string(channels));
  const std::int64_t moved = channels / fold;
  return {moved, channels - 2 * moved, moved};
}

namespace {

// Copies each frame's channel blocks from their source frame. With
// `adjoint` the two moving blocks travel in the opposite direction, which is
// the transpose of the forward index map.
template <class T>
void shift_frames(const T* src, T* dst, const Shape& shape, const ShiftPartition& part,
                  bool adjoint) {
  const std::int64_t batch = shape[0], frames = shape[1], channels = shape[2];
  const std::int64_t plane = shape[3] * shape[4];
  const std::int64_t frame_elems = channels * plane;
  const std::int64_t fwd_elems = part.forward * plane;
  const std::int64_t stay_elems = part.stay * plane;
  const std::int64_t bwd_elems = part.backward * plane;
  const std::int64_t bwd_offset = fwd_elems + stay_elems;
  const std::int64_t fwd_from = adjoint ? +1 : -1;
  const std::int64_t bwd_from = -fwd_from;
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* in = src + b * frames * frame_elems;
    T* out = dst + b * frames * frame_elems;
    for (std::int64_t f = 0; f < frames; ++f) {
      T* of = out + f * frame_elems;
      const std::int64_t sf = f + fwd_from;
      if (sf >= 0 && sf < frames)
        std::copy_n(in + sf * frame_elems, fwd_elems, of);
      else
        std::fill_n(of, fwd_elems, T(0));
      std::copy_n(in + f * frame_elems + fwd_elems, stay_elems, of + fwd_elems);
      const std::int64_t sb = f + bwd_from;
      if (sb >= 0 && sb < frames)
        std::copy_n(in + sb * frame_elems + bwd_offset, bwd_elems, of + bwd_offset);
      else
        std::fill_n(of + bwd_offset, bwd_elems, T(0));
    }
  }
}

void check_shape(const Shape& shape) {
  if (shape.size() != 5)
    throw ShapeError("temporal_shift expects (B,F,C,H,W), got " + shape_str(shape));
  if (shape[1] < 1) throw ShapeError("temporal_shift needs at least one frame");
}

}  // namespace

template <class T>
Tensor<T> temporal_shift(const Tensor<T>& z, const ShiftConfig& cfg) {
  check_shape(z.shape());
  const ShiftPartition part = cfg.partition(z.dim(2));
  std::vector<T> out(static_cast<std::size_t>(z.numel()));
  shift_frames(z.data().data(), out.data(), z.shape(), part, false);
  const Shape shape = z.shape();
  return Tensor<T>::make_op("temporal_shift", shape, std::move(out), {z},
                            [z, shape, part](std::span<const T> g) {
                              std::vector<T> gin(g.size());
                              shift_frames(g.data(), gin.data(), shape, part, true);
                              z.accumulate_grad(gin);
                            });
}

template <class T>
std::vector<T> temporal_shift_backward(std::span<const T> grad_out, const Shape& shape,
                                       const ShiftConfig& cfg) {
  check_shape(shape);
  if (numel(shape) != static_cast<std::int64_t>(grad_out.size()))
    throw ShapeError("temporal_shift_backward: gradient size does not match " + shape_str(shape));
  const ShiftPartition part = cfg.partition(shape[2]);
  std::vector<T> out(grad_out.size());
  shift_frames(grad_out.data(), out.data(), shape, part, true);
  return out;
}

std::vector<std::vector<int>> shift_provenance(int frames) {
  if (frames < 1) throw ShapeError("shift_provenance needs at least one frame");
  std::vector<std::vector<int>> rows;
  for (int i = 0; i < frames; ++i) rows.push_back({i - 1 >= 0 ? i - 1 : -1, i, i + 1 < frames ? i + 1 : -1});
  return rows;
}

template Tensor<float> temporal_shift(const Tensor<float>&, const ShiftConfig&);
template Tensor<double> temporal_shift(const Tensor<double>&, const ShiftConfig&);
template std::vector<float> temporal_shift_backward(std::span<const float>, const Shape&,
                                                    const ShiftConfig&);
template std::vector<double> temporal_shift_backward(std::span<const double>, const Shape&,
                                                     const ShiftConfig&);

}  // namespace lshift
