#include "lshift/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "lshift/gemm.hpp"

namespace lshift {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// ---- Tensor members ----------------------------------------------------------

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = lshift::numel(shape);
  return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value));
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  if (lshift::numel(shape) != static_cast<std::int64_t>(values.size()))
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->data = std::make_shared<std::vector<T>>(std::move(values));
  return Tensor(std::move(n));
}

template <class T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng) {
  if (shape.empty()) throw ShapeError("randn requires at least one dimension");
  for (auto d : shape)
    if (d < 1) throw ShapeError("randn requires positive dimensions, got " + shape_str(shape));
  std::vector<T> values(static_cast<std::size_t>(lshift::numel(shape)));
  rng.fill_normal(std::span<T>(values));
  return from(std::move(shape), std::move(values));
}

template <class T>
Tensor<T> Tensor<T>::make_op(const char* op, Shape shape, std::vector<T> values,
                             const std::vector<Tensor>& inputs, BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values));
  out.node_->op = op;
  if (!grad_enabled()) return out;
  const bool track = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (!track) return out;
  out.node_->requires_grad = true;
  for (const auto& in : inputs)
    if (in.requires_grad()) out.node_->inputs.push_back(in.node_);
  out.node_->backward_fn = std::move(backward);
  return out;
}

template <class T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <class T>
std::span<T> Tensor<T>::mutable_data() {
  if (!is_leaf()) throw GraphError("mutable_data() is only available on leaf tensors");
  return *node_->data;
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return (*node_->data)[0];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw GraphError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  return *this;
}

template <class T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (node_->grad.empty()) return zeros(node_->shape);
  return from(node_->shape, node_->grad);
}

template <class T>
std::span<T> Tensor<T>::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data->size(), T(0));
  return node_->grad;
}

template <class T>
void Tensor<T>::accumulate_grad(std::span<const T> g) const {
  auto buf = grad_buffer();
  if (g.size() != buf.size()) throw ShapeError("gradient size mismatch");
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return from(node_->shape, *node_->data);
}

template <class T>
Tensor<T> Tensor<T>::reshape(Shape shape) const {
  if (lshift::numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  auto n = std::make_shared<detail::Node<T>>();
  n->shape = std::move(shape);
  n->data = node_->data;
  n->op = "reshape";
  if (grad_enabled() && requires_grad()) {
    n->requires_grad = true;
    n->inputs.push_back(node_);
    Tensor src = *this;
    n->backward_fn = [src](std::span<const T> g) { src.accumulate_grad(g); };
  }
  return Tensor(std::move(n));
}

template <class T>
void Tensor<T>::validate_finite(std::string_view what) const {
  const auto& d = *node_->data;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!std::isfinite(d[i]))
      throw NumericError(std::string(what) + ": non-finite value at flat index " +
                         std::to_string(i));
}

template <class T>
void Tensor<T>::backward() const {
  using NodePtr = detail::Node<T>*;
  if (!node_) throw GraphError("backward() on an undefined tensor");
  if (numel() != 1)
    throw GraphError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (node_->consumed) throw GraphError("graph already consumed by a previous backward()");
  if (!node_->requires_grad)
    throw GraphError("loss does not depend on any tensor that requires grad");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      NodePtr child = n->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    if (n->consumed) throw GraphError("graph already consumed by a previous backward()");
    order.push_back(n);
    stack.pop_back();
  }

  node_->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(n->grad);
  }
  for (NodePtr n : order) {
    if (!n->backward_fn) continue;
    n->consumed = true;
    n->backward_fn = nullptr;
    n->inputs.clear();
    std::vector<T>().swap(n->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;

// ---- helpers -----------------------------------------------------------------

namespace {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <class T>
void require_rank(const Tensor<T>& a, int rank, const char* op) {
  if (a.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
}

}  // namespace

// ---- elementwise -------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor<T>::make_op("add", a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g) {
                              if (a.requires_grad()) a.accumulate_grad(g);
                              if (b.requires_grad()) b.accumulate_grad(g);
                            });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor<T>::make_op("sub", a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g) {
                              if (a.requires_grad()) a.accumulate_grad(g);
                              if (b.requires_grad()) {
                                auto buf = b.grad_buffer();
                                for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= g[i];
                              }
                            });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor<T>::make_op("mul", a.shape(), std::move(out), {a, b},
                            [a, b](std::span<const T> g) {
                              const auto x = a.data();
                              const auto y = b.data();
                              if (a.requires_grad()) {
                                auto buf = a.grad_buffer();
                                for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * y[i];
                              }
                              if (b.requires_grad()) {
                                auto buf = b.grad_buffer();
                                for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * x[i];
                              }
                            });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  const auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return Tensor<T>::make_op("scale", a.shape(), std::move(out), {a},
                            [a, s](std::span<const T> g) {
                              auto buf = a.grad_buffer();
                              for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * s;
                            });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  const auto v = x.data();
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] / (T(1) + std::exp(-v[i]));
  return Tensor<T>::make_op("silu", x.shape(), std::move(out), {x},
                            [x](std::span<const T> g) {
                              const auto v = x.data();
                              auto buf = x.grad_buffer();
                              for (std::size_t i = 0; i < buf.size(); ++i) {
                                const T s = T(1) / (T(1) + std::exp(-v[i]));
                                buf[i] += g[i] * s * (T(1) + v[i] * (T(1) - s));
                              }
                            });
}

// ---- reductions --------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return Tensor<T>::make_op("sum", {}, {acc}, {x}, [x](std::span<const T> g) {
    auto buf = x.grad_buffer();
    for (auto& b : buf) b += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "mse_loss");
  const auto p = pred.data();
  const auto t = target.data();
  const T n = static_cast<T>(p.size());
  T acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    acc += d * d;
  }
  return Tensor<T>::make_op(
      "mse_loss", {}, {acc / n}, {pred, target}, [pred, target, n](std::span<const T> g) {
        const auto p = pred.data();
        const auto t = target.data();
        const T c = T(2) * g[0] / n;
        if (pred.requires_grad()) {
          auto buf = pred.grad_buffer();
          for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += c * (p[i] - t[i]);
        }
        if (target.requires_grad()) {
          auto buf = target.grad_buffer();
          for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= c * (p[i] - t[i]);
        }
      });
}

// ---- linear algebra ----------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return Tensor<T>::make_op("matmul", {m, n}, std::move(out), {a, b},
                            [a, b, m, n, k](std::span<const T> g) {
                              if (a.requires_grad())
                                gemm<T>(false, true, m, k, n, g.data(), b.data().data(),
                                        a.grad_buffer().data(), true);
                              if (b.requires_grad())
                                gemm<T>(true, false, k, n, m, a.data().data(), g.data(),
                                        b.grad_buffer().data(), true);
                            });
}

template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const auto batch = a.dim(0);
  if (b.dim(0) != batch) throw ShapeError("bmm: batch sizes differ");
  const auto m = ta ? a.dim(2) : a.dim(1);
  const auto k = ta ? a.dim(1) : a.dim(2);
  const auto kb = tb ? b.dim(2) : b.dim(1);
  const auto n = tb ? b.dim(1) : b.dim(2);
  if (k != kb)
    throw ShapeError("bmm: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const auto sa = m * k, sb = k * n, sc = m * n;
  std::vector<T> out(static_cast<std::size_t>(batch * sc));
  for (std::int64_t i = 0; i < batch; ++i)
    gemm<T>(ta, tb, m, n, k, a.data().data() + i * sa, b.data().data() + i * sb,
            out.data() + i * sc, false);
  return Tensor<T>::make_op(
      "bmm", {batch, m, n}, std::move(out), {a, b},
      [a, b, ta, tb, batch, m, n, k, sa, sb, sc](std::span<const T> g) {
        for (std::int64_t i = 0; i < batch; ++i) {
          const T* gi = g.data() + i * sc;
          const T* ai = a.data().data() + i * sa;
          const T* bi = b.data().data() + i * sb;
          if (a.requires_grad()) {
            T* da = a.grad_buffer().data() + i * sa;
            if (!ta)  // dA (m,k) = dC op(B)^T
              gemm<T>(false, !tb, m, k, n, gi, bi, da, true);
            else  // dA_stored (k,m) = op(B) dC^T
              gemm<T>(tb, true, k, m, n, bi, gi, da, true);
          }
          if (b.requires_grad()) {
            T* db = b.grad_buffer().data() + i * sb;
            if (!tb)  // dB (k,n) = op(A)^T dC
              gemm<T>(!ta, false, k, n, m, ai, gi, db, true);
            else  // dB_stored (n,k) = dC^T op(A)
              gemm<T>(true, ta, n, k, m, gi, ai, db, true);
          }
        }
      });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(w, 2, "linear");
  const auto out_f = w.dim(0), in_f = w.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_f)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_f))
    throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  const auto rows = x.numel() / in_f;
  std::vector<T> out(static_cast<std::size_t>(rows * out_f));
  gemm<T>(false, true, rows, out_f, in_f, x.data().data(), w.data().data(), out.data(), false);
  if (b.defined()) {
    const auto bv = b.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t o = 0; o < out_f; ++o) out[r * out_f + o] += bv[o];
  }
  Shape shape = x.shape();
  shape.back() = out_f;
  std::vector<Tensor<T>> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return Tensor<T>::make_op(
      "linear", std::move(shape), std::move(out), inputs,
      [x, w, b, rows, in_f, out_f](std::span<const T> g) {
        if (x.requires_grad())
          gemm<T>(false, false, rows, in_f, out_f, g.data(), w.data().data(),
                  x.grad_buffer().data(), true);
        if (w.requires_grad())
          gemm<T>(true, false, out_f, in_f, rows, g.data(), x.data().data(),
                  w.grad_buffer().data(), true);
        if (b.defined() && b.requires_grad()) {
          auto db = b.grad_buffer();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t o = 0; o < out_f; ++o) db[o] += g[r * out_f + o];
        }
      });
}

// ---- convolution -------------------------------------------------------------

namespace {

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  Conv2dOptions o;
  std::int64_t rows() const { return cin * kh * kw; }
  std::int64_t cols() const { return n * ho * wo; }
};

// Output columns ox with a valid input column ix = ox*stride + kx - pad.
struct ValidRange {
  std::int64_t lo, hi;
};

inline ValidRange valid_range(std::int64_t out, std::int64_t in, int stride, std::int64_t offset) {
  std::int64_t lo = 0, hi = out;
  while (lo < hi && lo * stride + offset < 0) ++lo;
  while (hi > lo && (hi - 1) * stride + offset >= in) --hi;
  return {lo, hi};
}

// col[(ci*kh + ky)*kw + kx][(b*ho + oy)*wo + ox]
template <class T>
void im2col(const ConvGeom& g, const T* x, std::vector<T>& col) {
  col.resize(static_cast<std::size_t>(g.rows() * g.cols()));
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = col.data() + ((ci * g.kh + ky) * g.kw + kx) * g.cols();
        const auto xr = valid_range(g.wo, g.w, g.o.stride, kx - g.o.pad_left);
        for (std::int64_t b = 0; b < g.n; ++b) {
          const T* src = x + (b * g.cin + ci) * g.h * g.w;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            T* dst = row + b * plane + oy * g.wo;
            const std::int64_t iy = oy * g.o.stride + ky - g.o.pad_top;
            if (iy < 0 || iy >= g.h) {
              std::fill_n(dst, g.wo, T(0));
              continue;
            }
            std::fill(dst, dst + xr.lo, T(0));
            std::fill(dst + xr.hi, dst + g.wo, T(0));
            const T* s = src + iy * g.w + kx - g.o.pad_left;
            if (g.o.stride == 1) {
              std::copy(s + xr.lo, s + xr.hi, dst + xr.lo);
            } else {
              for (std::int64_t ox = xr.lo; ox < xr.hi; ++ox) dst[ox] = s[ox * g.o.stride];
            }
          }
        }
      }
}

// Transposed layout: row[(b*ho + oy)*wo + ox][(ci*kh + ky)*kw + kx].
template <class T>
void im2row(const ConvGeom& g, const T* x, std::vector<T>& out) {
  out.resize(static_cast<std::size_t>(g.rows() * g.cols()));
  const std::int64_t taps = g.kh * g.kw;
  for (std::int64_t b = 0; b < g.n; ++b)
    for (std::int64_t oy = 0; oy < g.ho; ++oy)
      for (std::int64_t ox = 0; ox < g.wo; ++ox) {
        T* dst = out.data() + ((b * g.ho + oy) * g.wo + ox) * g.rows();
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.o.stride + ky - g.o.pad_top;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const std::int64_t ix = ox * g.o.stride + kx - g.o.pad_left;
            T* d = dst + ky * g.kw + kx;
            if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
              for (std::int64_t ci = 0; ci < g.cin; ++ci) d[ci * taps] = T(0);
              continue;
            }
            const T* src = x + (b * g.cin * g.h + iy) * g.w + ix;
            for (std::int64_t ci = 0; ci < g.cin; ++ci) d[ci * taps] = src[ci * g.h * g.w];
          }
        }
      }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* col, T* dx) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * g.cols();
        for (std::int64_t b = 0; b < g.n; ++b) {
          T* dst = dx + (b * g.cin + ci) * g.h * g.w;
          const T* src = row + b * plane;
          for (std::int64_t oy = 0; oy < g.ho; ++oy) {
            const std::int64_t iy = oy * g.o.stride + ky - g.o.pad_top;
            if (iy < 0 || iy >= g.h) continue;
            for (std::int64_t ox = 0; ox < g.wo; ++ox) {
              const std::int64_t ix = ox * g.o.stride + kx - g.o.pad_left;
              if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Conv2dOptions opts) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
             kernel.dim(2), kernel.dim(3), 0, 0, opts};
  if (kernel.dim(1) != g.cin)
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                     shape_str(input.shape()));
  const bool ok_kernel = (g.kh == 3 && g.kw == 3) || (g.kh == 1 && g.kw == 1);
  if (!ok_kernel) throw ShapeError("conv2d: only 3x3 and 1x1 kernels are supported");
  if (opts.stride < 1 || opts.pad_top < 0 || opts.pad_left < 0 || opts.pad_bottom < 0 ||
      opts.pad_right < 0)
    throw ShapeError("conv2d: invalid stride or padding");
  const std::int64_t span_h = g.h + opts.pad_top + opts.pad_bottom - g.kh;
  const std::int64_t span_w = g.w + opts.pad_left + opts.pad_right - g.kw;
  if (span_h < 0 || span_w < 0 || span_h % opts.stride != 0 || span_w % opts.stride != 0)
    throw ShapeError("conv2d: non-integer output size for input " + shape_str(input.shape()) +
                     " with stride " + std::to_string(opts.stride));
  g.ho = span_h / opts.stride + 1;
  g.wo = span_w / opts.stride + 1;
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));

  thread_local std::vector<T> col;
  im2col(g, input.data().data(), col);
  const std::int64_t plane = g.ho * g.wo;
  std::vector<T> tmp(static_cast<std::size_t>(g.cout * g.cols()));
  gemm<T>(false, false, g.cout, g.cols(), g.rows(), kernel.data().data(), col.data(), tmp.data(),
          false);
  std::vector<T> out(tmp.size());
  for (std::int64_t b = 0; b < g.n; ++b)
    for (std::int64_t co = 0; co < g.cout; ++co) {
      const T bv = bias.defined() ? bias.data()[co] : T(0);
      const T* src = tmp.data() + co * g.cols() + b * plane;
      T* dst = out.data() + (b * g.cout + co) * plane;
      if (bias.defined())
        for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] + bv;
      else
        std::copy(src, src + plane, dst);
    }

  std::vector<Tensor<T>> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::make_op(
      "conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(out), inputs,
      [input, kernel, bias, g, plane](std::span<const T> grad) {
        std::vector<T> gt(static_cast<std::size_t>(g.cout * g.cols()));
        for (std::int64_t b = 0; b < g.n; ++b)
          for (std::int64_t co = 0; co < g.cout; ++co)
            std::copy_n(grad.data() + (b * g.cout + co) * plane, plane,
                        gt.data() + co * g.cols() + b * plane);
        if (bias.defined() && bias.requires_grad()) {
          auto db = bias.grad_buffer();
          for (std::int64_t co = 0; co < g.cout; ++co) {
            T acc = 0;
            const T* row = gt.data() + co * g.cols();
            for (std::int64_t p = 0; p < g.cols(); ++p) acc += row[p];
            db[co] += acc;
          }
        }
        if (kernel.requires_grad()) {
          thread_local std::vector<T> rows;
          im2row(g, input.data().data(), rows);
          gemm<T>(false, false, g.cout, g.rows(), g.cols(), gt.data(), rows.data(),
                  kernel.grad_buffer().data(), true);
        }
        if (input.requires_grad()) {
          std::vector<T> dcol(static_cast<std::size_t>(g.rows() * g.cols()));
          gemm<T>(true, false, g.rows(), g.cols(), g.cout, kernel.data().data(), gt.data(),
                  dcol.data(), false);
          col2im_add(g, dcol.data(), input.grad_buffer().data());
        }
      });
}

// ---- normalization -----------------------------------------------------------

template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  if (x.rank() < 2) throw ShapeError("group_norm: expected (N,C,...) input");
  const auto n = x.dim(0), c = x.dim(1);
  if (groups < 1 || c % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible by " +
                     std::to_string(groups) + " groups");
  if (!(eps > T(0))) throw ShapeError("group_norm: eps must be positive");
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("group_norm: gamma/beta must have C elements");
  const std::int64_t spatial = x.numel() / (n * c);
  const std::int64_t cg = c / groups;
  const std::int64_t count = cg * spatial;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<T> out(xv.size());
  std::vector<double> means(static_cast<std::size_t>(n * groups));
  std::vector<double> rstds(means.size());
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const T* base = xv.data() + (s * c + gi * cg) * spatial;
      double m = 0;
      for (std::int64_t i = 0; i < count; ++i) m += base[i];
      m /= static_cast<double>(count);
      double var = 0;
      for (std::int64_t i = 0; i < count; ++i) {
        const double d = base[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(count);
      const double rstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      means[s * groups + gi] = m;
      rstds[s * groups + gi] = rstd;
      T* o = out.data() + (s * c + gi * cg) * spatial;
      for (std::int64_t ch = 0; ch < cg; ++ch) {
        const std::int64_t cc = gi * cg + ch;
        for (std::int64_t p = 0; p < spatial; ++p) {
          const std::int64_t i = ch * spatial + p;
          const double xhat = (base[i] - m) * rstd;
          o[i] = static_cast<T>(xhat * gv[cc] + bv[cc]);
        }
      }
    }
  return Tensor<T>::make_op(
      "group_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, c, groups, cg, spatial, count, means = std::move(means),
       rstds = std::move(rstds)](std::span<const T> g) {
        const auto xv = x.data();
        const auto gv = gamma.data();
        std::span<T> dx, dgamma, dbeta;
        if (x.requires_grad()) dx = x.grad_buffer();
        if (gamma.requires_grad()) dgamma = gamma.grad_buffer();
        if (beta.requires_grad()) dbeta = beta.grad_buffer();
        for (std::int64_t s = 0; s < n; ++s)
          for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t off = (s * c + gi * cg) * spatial;
            const double m = means[s * groups + gi];
            const double rstd = rstds[s * groups + gi];
            double sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (std::int64_t ch = 0; ch < cg; ++ch) {
              const std::int64_t cc = gi * cg + ch;
              double dg = 0, db = 0;
              for (std::int64_t p = 0; p < spatial; ++p) {
                const std::int64_t i = off + ch * spatial + p;
                const double xhat = (xv[i] - m) * rstd;
                const double dxhat = static_cast<double>(g[i]) * gv[cc];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                dg += static_cast<double>(g[i]) * xhat;
                db += g[i];
              }
              if (!dgamma.empty()) dgamma[cc] += static_cast<T>(dg);
              if (!dbeta.empty()) dbeta[cc] += static_cast<T>(db);
            }
            if (dx.empty()) continue;
            const double inv_count = 1.0 / static_cast<double>(count);
            for (std::int64_t ch = 0; ch < cg; ++ch) {
              const std::int64_t cc = gi * cg + ch;
              for (std::int64_t p = 0; p < spatial; ++p) {
                const std::int64_t i = off + ch * spatial + p;
                const double xhat = (xv[i] - m) * rstd;
                const double dxhat = static_cast<double>(g[i]) * gv[cc];
                dx[i] += static_cast<T>(
                    rstd * (dxhat - inv_count * (sum_dxhat + xhat * sum_dxhat_xhat)));
              }
            }
          }
      });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("softmax: axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  const std::int64_t len = x.dim(axis);
  const auto v = x.data();
  std::vector<T> out(v.size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      T mx = v[base];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, v[base + j * inner]);
      T total = 0;
      for (std::int64_t j = 0; j < len; ++j) {
        const T e = std::exp(v[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::int64_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  auto values = std::make_shared<std::vector<T>>(out);
  return Tensor<T>::make_op(
      "softmax", x.shape(), std::move(out), {x},
      [x, values, outer, inner, len](std::span<const T> g) {
        const auto& y = *values;
        auto dx = x.grad_buffer();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * len * inner + in;
            T dot = 0;
            for (std::int64_t j = 0; j < len; ++j)
              dot += g[base + j * inner] * y[base + j * inner];
            for (std::int64_t j = 0; j < len; ++j) {
              const std::int64_t i = base + j * inner;
              dx[i] += y[i] * (g[i] - dot);
            }
          }
      });
}

// ---- structural --------------------------------------------------------------

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: wrong number of axes");
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int a : axes) {
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)])
      throw ShapeError("permute: axes are not a permutation");
    seen[static_cast<std::size_t>(a)] = true;
  }
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.dim(i + 1);
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> src_stride(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[i] = x.dim(axes[i]);
    src_stride[i] = in_strides[axes[i]];
  }
  // map[out_flat] = in_flat
  const std::int64_t total = x.numel();
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(total));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t src = 0;
  for (std::int64_t flat = 0; flat < total; ++flat) {
    (*map)[flat] = src;
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  const auto v = x.data();
  std::vector<T> out(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < total; ++i) out[i] = v[(*map)[i]];
  return Tensor<T>::make_op("permute", std::move(out_shape), std::move(out), {x},
                            [x, map](std::span<const T> g) {
                              auto dx = x.grad_buffer();
                              for (std::size_t i = 0; i < map->size(); ++i) dx[(*map)[i]] += g[i];
                            });
}

template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<std::int64_t>& sizes) {
  if (x.rank() < 2) throw ShapeError("split_channels: expected (N,C,...) input");
  const auto n = x.dim(0), c = x.dim(1);
  std::int64_t total = 0;
  for (auto s : sizes) {
    if (s < 0) throw ShapeError("split_channels: negative size");
    total += s;
  }
  if (total != c)
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + ", expected " +
                     std::to_string(c));
  const std::int64_t inner = x.numel() / (n * c);
  std::vector<Tensor<T>> parts;
  std::int64_t offset = 0;
  const auto v = x.data();
  for (auto s : sizes) {
    Shape shape = x.shape();
    shape[1] = s;
    std::vector<T> out(static_cast<std::size_t>(n * s * inner));
    for (std::int64_t b = 0; b < n; ++b)
      std::copy_n(v.data() + (b * c + offset) * inner, s * inner, out.data() + b * s * inner);
    parts.push_back(Tensor<T>::make_op("split_channels", std::move(shape), std::move(out), {x},
                                       [x, n, c, s, offset, inner](std::span<const T> g) {
                                         auto dx = x.grad_buffer();
                                         for (std::int64_t b = 0; b < n; ++b)
                                           for (std::int64_t i = 0; i < s * inner; ++i)
                                             dx[(b * c + offset) * inner + i] +=
                                                 g[b * s * inner + i];
                                       }));
    offset += s;
  }
  return parts;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const auto& first = parts.front();
  if (first.rank() < 2) throw ShapeError("concat_channels: expected (N,C,...) inputs");
  const auto n = first.dim(0);
  std::int64_t c = 0;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != first.rank() || p.dim(0) != n)
      throw ShapeError("concat_channels: incompatible part " + shape_str(p.shape()));
    for (int d = 2; d < p.rank(); ++d)
      if (p.dim(d) != first.dim(d))
        throw ShapeError("concat_channels: incompatible part " + shape_str(p.shape()));
    widths.push_back(p.dim(1));
    c += p.dim(1);
  }
  std::int64_t in_elems = 1;
  for (int d = 2; d < first.rank(); ++d) in_elems *= first.dim(d);
  Shape shape = first.shape();
  shape[1] = c;
  std::vector<T> out(static_cast<std::size_t>(n * c * in_elems));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto v = parts[k].data();
    const auto s = widths[k];
    for (std::int64_t b = 0; b < n; ++b)
      std::copy_n(v.data() + b * s * in_elems, s * in_elems,
                  out.data() + (b * c + offset) * in_elems);
    offset += s;
  }
  return Tensor<T>::make_op("concat_channels", std::move(shape), std::move(out), parts,
                            [parts, widths, n, c, in_elems](std::span<const T> g) {
                              std::int64_t offset = 0;
                              for (std::size_t k = 0; k < parts.size(); ++k) {
                                const auto s = widths[k];
                                if (parts[k].requires_grad()) {
                                  auto dp = parts[k].grad_buffer();
                                  for (std::int64_t b = 0; b < n; ++b)
                                    for (std::int64_t i = 0; i < s * in_elems; ++i)
                                      dp[b * s * in_elems + i] +=
                                          g[(b * c + offset) * in_elems + i];
                                }
                                offset += s;
                              }
                            });
}

template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be positive");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ho = h * factor, wo = w * factor;
  const auto v = x.data();
  std::vector<T> out(static_cast<std::size_t>(n * c * ho * wo));
  for (std::int64_t p = 0; p < n * c; ++p)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xx = 0; xx < wo; ++xx)
        out[(p * ho + y) * wo + xx] = v[(p * h + y / factor) * w + xx / factor];
  return Tensor<T>::make_op("upsample_nearest", {n, c, ho, wo}, std::move(out), {x},
                            [x, n, c, h, w, ho, wo, factor](std::span<const T> g) {
                              auto dx = x.grad_buffer();
                              for (std::int64_t p = 0; p < n * c; ++p)
                                for (std::int64_t y = 0; y < ho; ++y)
                                  for (std::int64_t xx = 0; xx < wo; ++xx)
                                    dx[(p * h + y / factor) * w + xx / factor] +=
                                        g[(p * ho + y) * wo + xx];
                            });
}

template <class T>
Tensor<T> add_channel_rows(const Tensor<T>& x, const Tensor<T>& v) {
  if (x.rank() < 2 || v.rank() != 2) throw ShapeError("add_channel_rows: bad ranks");
  const auto n = x.dim(0), c = x.dim(1), groups = v.dim(0);
  if (v.dim(1) != c || groups == 0 || n % groups != 0)
    throw ShapeError("add_channel_rows: " + shape_str(v.shape()) + " incompatible with " +
                     shape_str(x.shape()));
  const std::int64_t per = n / groups;
  const std::int64_t inner = x.numel() / (n * c);
  const auto xv = x.data();
  const auto vv = v.data();
  std::vector<T> out(xv.size());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T add = vv[(b / per) * c + ch];
      const std::int64_t off = (b * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) out[off + i] = xv[off + i] + add;
    }
  return Tensor<T>::make_op("add_channel_rows", x.shape(), std::move(out), {x, v},
                            [x, v, n, c, per, inner](std::span<const T> g) {
                              if (x.requires_grad()) x.accumulate_grad(g);
                              if (v.requires_grad()) {
                                auto dv = v.grad_buffer();
                                for (std::int64_t b = 0; b < n; ++b)
                                  for (std::int64_t ch = 0; ch < c; ++ch) {
                                    T acc = 0;
                                    const std::int64_t off = (b * c + ch) * inner;
                                    for (std::int64_t i = 0; i < inner; ++i) acc += g[off + i];
                                    dv[(b / per) * c + ch] += acc;
                                  }
                              }
                            });
}

template <class T>
Tensor<T> repeat_batch(const Tensor<T>& x, std::int64_t times) {
  if (x.rank() < 1 || times < 1) throw ShapeError("repeat_batch: invalid arguments");
  const auto n = x.dim(0);
  const std::int64_t inner = x.numel() / std::max<std::int64_t>(1, n);
  const auto v = x.data();
  std::vector<T> out(static_cast<std::size_t>(n * times * inner));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t r = 0; r < times; ++r)
      std::copy_n(v.data() + b * inner, inner, out.data() + (b * times + r) * inner);
  Shape shape = x.shape();
  shape[0] = n * times;
  return Tensor<T>::make_op("repeat_batch", std::move(shape), std::move(out), {x},
                            [x, n, times, inner](std::span<const T> g) {
                              auto dx = x.grad_buffer();
                              for (std::int64_t b = 0; b < n; ++b)
                                for (std::int64_t r = 0; r < times; ++r)
                                  for (std::int64_t i = 0; i < inner; ++i)
                                    dx[b * inner + i] += g[(b * times + r) * inner + i];
                            });
}

template <class T>
Tensor<T> embedding(std::span<const std::int64_t> ids, const Tensor<T>& table) {
  require_rank(table, 2, "embedding");
  const auto vocab = table.dim(0), d = table.dim(1);
  auto idv = std::make_shared<std::vector<std::int64_t>>(ids.begin(), ids.end());
  const auto tv = table.data();
  std::vector<T> out(static_cast<std::size_t>(static_cast<std::int64_t>(ids.size()) * d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab)
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range [0," +
                       std::to_string(vocab) + ")");
    std::copy_n(tv.data() + ids[i] * d, d, out.data() + static_cast<std::int64_t>(i) * d);
  }
  return Tensor<T>::make_op("embedding", {static_cast<std::int64_t>(ids.size()), d},
                            std::move(out), {table}, [table, idv, d](std::span<const T> g) {
                              auto dt = table.grad_buffer();
                              for (std::size_t i = 0; i < idv->size(); ++i)
                                for (std::int64_t j = 0; j < d; ++j)
                                  dt[(*idv)[i] * d + j] += g[static_cast<std::int64_t>(i) * d + j];
                            });
}

#define LSHIFT_INSTANTIATE(T)                                                                    \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> silu(const Tensor<T>&);                                                     \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions); \
  template Tensor<T> group_norm(const Tensor<T>&, int, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> softmax(const Tensor<T>&, int);                                             \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                         \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&,                               \
                                                 const std::vector<std::int64_t>&);              \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                    \
  template Tensor<T> add_channel_rows(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> repeat_batch(const Tensor<T>&, std::int64_t);                               \
  template Tensor<T> embedding(std::span<const std::int64_t>, const Tensor<T>&);

LSHIFT_INSTANTIATE(float)
LSHIFT_INSTANTIATE(double)

#undef LSHIFT_INSTANTIATE

}  // namespace lshift
