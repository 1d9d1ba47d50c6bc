#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "lshift/rng.hpp"

namespace lshift {

using Shape = std::vector<std::int64_t>;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration value (bad fold, schedule bounds, unknown key, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the autodiff graph (non-scalar loss, backward on a consumed graph).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(std::span<const T>)> backward_fn;
};

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// Tensors are handles: copies share storage and graph node. Values are never
/// mutated after construction except through mutable_data() on leaves, which
/// the optimizer uses for parameter updates.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(std::span<const T> grad_out)>;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor scalar(T value) { return from({}, {value}); }
  /// I.i.d. standard normals drawn from `rng` (see Rng::fill_normal).
  static Tensor randn(Shape shape, Rng& rng);

  /// Records a graph node when grad mode is on and any input requires grad.
  /// `backward` receives the gradient of the result and must accumulate into
  /// the inputs via accumulate_grad().
  static Tensor make_op(const char* op, Shape shape, std::vector<T> values,
                        const std::vector<Tensor>& inputs, BackwardFn backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data->size()); }
  static constexpr DType dtype() { return dtype_of<T>(); }
  const char* op() const { return node_->op; }

  std::span<const T> data() const { return *node_->data; }
  std::vector<T> to_vector() const { return *node_->data; }
  std::span<T> mutable_data();
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return !node_->backward_fn && !node_->consumed; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  Tensor grad_tensor() const;
  void zero_grad() { node_->grad.clear(); }
  void accumulate_grad(std::span<const T> g) const;
  /// Gradient buffer, allocated zero-filled on first use.
  std::span<T> grad_buffer() const;

  /// Copy of the values with no graph history.
  Tensor detach() const;
  /// Shares storage with a new shape; differentiable.
  Tensor reshape(Shape shape) const;

  /// Throws NumericError naming `what` if any value is NaN or infinite.
  void validate_finite(std::string_view what) const;

  /// Propagates d(this)/d(leaf) into every requires_grad leaf. `this` must be
  /// a scalar; the graph is consumed and cannot be traversed twice.
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node<T>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>::from(t.shape(), std::move(out));
}

// ---- elementwise -------------------------------------------------------------

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
template <class T> Tensor<T> silu(const Tensor<T>& x);

// ---- reductions and losses ---------------------------------------------------

template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
/// Mean of squared differences over all elements.
template <class T> Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

// ---- linear algebra ----------------------------------------------------------

/// (m,k) x (k,n) -> (m,n).
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Batched product of rank-3 tensors with optional transposition of the last two axes.
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
              bool transpose_b = false);
/// x (..., in) . W^T + b with W (out, in). `b` may be undefined.
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

struct Conv2dOptions {
  int stride = 1;
  int pad_top = 0;
  int pad_left = 0;
  int pad_bottom = 0;
  int pad_right = 0;

  static Conv2dOptions same(int stride, int padding) {
    return {stride, padding, padding, padding, padding};
  }
};

/// Cross-correlation of (N,Cin,H,W) with (Cout,Cin,kh,kw); `bias` may be undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Conv2dOptions opts);
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding) {
  return conv2d(input, kernel, bias, Conv2dOptions::same(stride, padding));
}

// ---- normalization and attention helpers -------------------------------------

/// Standardizes each (sample, group) of an (N,C,...) tensor, then applies gamma/beta per channel.
template <class T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps);
template <class T> Tensor<T> softmax(const Tensor<T>& x, int axis);

// ---- structural --------------------------------------------------------------

template <class T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);
template <class T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<std::int64_t>& sizes);
template <class T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
/// Nearest-neighbour spatial upsampling of an (N,C,H,W) tensor.
template <class T> Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);
/// x (N,C,...) plus v (G,C) where sample n uses row n / (N/G).
template <class T> Tensor<T> add_channel_rows(const Tensor<T>& x, const Tensor<T>& v);
/// Repeats every slice along axis 0 `times` times consecutively.
template <class T> Tensor<T> repeat_batch(const Tensor<T>& x, std::int64_t times);
/// Gathers rows of `table` (V,d) for each id; result shape (ids.size(), d).
template <class T>
Tensor<T> embedding(std::span<const std::int64_t> ids, const Tensor<T>& table);

}  // namespace lshift
