#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ridgegen/sparse_map.hpp"
#include "ridgegen/tensor.hpp"

namespace ridgegen {

// Reverse-mode autodiff over Tensor<T>. Every backward rule is itself written
// in terms of engine ops over the captured *input* variables, so gradients are
// ordinary graph nodes and grad-of-grad (needed for gradient-penalty terms)
// works without special cases. Piecewise-linear activations use detached
// masks, which is exact almost everywhere.

template <typename T>
class Var;

namespace detail {

inline thread_local bool g_grad_enabled = true;

}  // namespace detail

// Disables graph construction in a scope; ops return constants.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class EnableGradGuard {
 public:
  EnableGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = true; }
  ~EnableGradGuard() { detail::g_grad_enabled = prev_; }
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  bool is_leaf = true;
  Tensor<T> grad_accum;  // populated for leaves by backward()
  std::vector<Var<T>> inputs;
  std::function<std::vector<Var<T>>(const Var<T>&)> backward_fn;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  int64_t dim(size_t i) const { return node_->value.dim(i); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  const Tensor<T>& grad() const { return node_->grad_accum; }
  void zero_grad() { node_->grad_accum = Tensor<T>(); }

  // In-place value update for optimizer steps on leaf parameters.
  Tensor<T>& mutable_value() {
    check_usage(node_ && node_->is_leaf, "mutable_value: only leaves may be updated in place");
    return node_->value;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = false;
  n->is_leaf = true;
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> param(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->is_leaf = true;
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return constant(x.value());
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<std::vector<Var<T>>(const Var<T>&)> backward_fn) {
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs)
      if (in.requires_grad()) needs = true;
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  if (needs) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(n));
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  check_usage(same_shape(a, b), "elementwise op: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* dst = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace detail

// ---- arithmetic ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto v = detail::map_binary(a.value(), b.value(), [](T x, T y) { return x + y; });
  return detail::make_op<T>(std::move(v), {a, b},
                            [](const Var<T>& g) { return std::vector<Var<T>>{g, g}; });
}

template <typename T>
Var<T> neg(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) { return -a; });
  return detail::make_op<T>(std::move(v), {x},
                            [](const Var<T>& g) { return std::vector<Var<T>>{neg(g)}; });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto v = detail::map_binary(a.value(), b.value(), [](T x, T y) { return x - y; });
  return detail::make_op<T>(std::move(v), {a, b},
                            [](const Var<T>& g) { return std::vector<Var<T>>{g, neg(g)}; });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto v = detail::map_binary(a.value(), b.value(), [](T x, T y) { return x * y; });
  return detail::make_op<T>(std::move(v), {a, b}, [a, b](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, b), mul(g, a)};
  });
}

template <typename T>
Var<T> divv(const Var<T>& a, const Var<T>& b) {
  auto v = detail::map_binary(a.value(), b.value(), [](T x, T y) { return x / y; });
  return detail::make_op<T>(std::move(v), {a, b}, [a, b](const Var<T>& g) {
    Var<T> ga = divv(g, b);
    Var<T> gb = neg(mul(ga, divv(a, b)));
    return std::vector<Var<T>>{ga, gb};
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, double s) {
  auto v = detail::map_unary(x.value(), [s](T a) { return static_cast<T>(a * s); });
  return detail::make_op<T>(std::move(v), {x},
                            [s](const Var<T>& g) { return std::vector<Var<T>>{scale(g, s)}; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, double s) {
  auto v = detail::map_unary(x.value(), [s](T a) { return static_cast<T>(a + s); });
  return detail::make_op<T>(std::move(v), {x},
                            [](const Var<T>& g) { return std::vector<Var<T>>{g}; });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) { return a * a; });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    return std::vector<Var<T>>{scale(mul(g, x), 2.0)};
  });
}

// ---- transcendental / activations ----

template <typename T>
Var<T> exp_v(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) { return std::exp(a); });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, exp_v(x))};
  });
}

template <typename T>
Var<T> log_v(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) { return std::log(a); });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    return std::vector<Var<T>>{divv(g, x)};
  });
}

template <typename T>
Var<T> sqrt_v(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) { return std::sqrt(a); });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    return std::vector<Var<T>>{scale(divv(g, sqrt_v(x)), 0.5)};
  });
}

template <typename T>
Var<T> tanh_v(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) { return std::tanh(a); });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    Var<T> t = tanh_v(x);
    return std::vector<Var<T>>{mul(g, add_scalar(neg(square(t)), 1.0))};
  });
}

template <typename T>
Var<T> sigmoid_v(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) {
    return a >= 0 ? T(1) / (T(1) + std::exp(-a)) : std::exp(a) / (T(1) + std::exp(a));
  });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    Var<T> s = sigmoid_v(x);
    return std::vector<Var<T>>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
  });
}

// log(1 + exp(x)), overflow-safe.
template <typename T>
Var<T> softplus_v(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) {
    return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
  });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    return std::vector<Var<T>>{mul(g, sigmoid_v(x))};
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  auto v = detail::map_unary(x.value(), [](T a) { return a > T(0) ? a : T(0); });
  return detail::make_op<T>(std::move(v), {x}, [x](const Var<T>& g) {
    auto mask = detail::map_unary(x.value(), [](T a) { return a > T(0) ? T(1) : T(0); });
    return std::vector<Var<T>>{mul(g, constant(std::move(mask)))};
  });
}

template <typename T>
Var<T> lrelu(const Var<T>& x, double alpha = 0.2) {
  auto v = detail::map_unary(x.value(),
                             [alpha](T a) { return a > T(0) ? a : static_cast<T>(a * alpha); });
  return detail::make_op<T>(std::move(v), {x}, [x, alpha](const Var<T>& g) {
    auto mask = detail::map_unary(
        x.value(), [alpha](T a) { return a > T(0) ? T(1) : static_cast<T>(alpha); });
    return std::vector<Var<T>>{mul(g, constant(std::move(mask)))};
  });
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Shape prev = x.shape();
  auto v = x.value().reshaped(std::move(shape));
  return detail::make_op<T>(std::move(v), {x}, [prev](const Var<T>& g) {
    return std::vector<Var<T>>{reshape(g, prev)};
  });
}

namespace detail {

template <typename T>
Tensor<T> transpose_values(const Tensor<T>& x) {
  check_usage(x.ndim() == 2, "transpose: expected 2-d tensor");
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out({c, r});
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> mx(x.data(), r, c);
  Eigen::Map<Mat> mo(out.data(), c, r);
  mo = mx.transpose();
  return out;
}

template <typename T>
Tensor<T> matmul_values(const Tensor<T>& a, const Tensor<T>& b) {
  check_usage(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
              "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                  shape_str(b.shape()));
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a.data(), a.dim(0), a.dim(1));
  Eigen::Map<const Mat> mb(b.data(), b.dim(0), b.dim(1));
  Tensor<T> out({a.dim(0), b.dim(1)});
  Eigen::Map<Mat> mo(out.data(), a.dim(0), b.dim(1));
  mo.noalias() = ma * mb;
  return out;
}

}  // namespace detail

template <typename T>
Var<T> transpose(const Var<T>& x) {
  return detail::make_op<T>(detail::transpose_values(x.value()), {x}, [](const Var<T>& g) {
    return std::vector<Var<T>>{transpose(g)};
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  return detail::make_op<T>(detail::matmul_values(a.value(), b.value()), {a, b},
                            [a, b](const Var<T>& g) {
                              return std::vector<Var<T>>{matmul(g, transpose(b)),
                                                         matmul(transpose(a), g)};
                            });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int64_t start, int64_t len);

// Places a [R, len] block into a zero [R, total] matrix at column `start`.
template <typename T>
Var<T> embed_cols(const Var<T>& x, int64_t total, int64_t start) {
  check_usage(x.shape().size() == 2 && start >= 0 && start + x.dim(1) <= total,
              "embed_cols: block out of range");
  const int64_t r = x.dim(0), len = x.dim(1);
  Tensor<T> v({r, total});
  const T* src = x.value().data();
  T* dst = v.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < len; ++j) dst[i * total + start + j] = src[i * len + j];
  return detail::make_op<T>(std::move(v), {x}, [start, len](const Var<T>& g) {
    return std::vector<Var<T>>{slice_cols(g, start, len)};
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, int64_t start, int64_t len) {
  check_usage(x.shape().size() == 2 && start >= 0 && len >= 0 && start + len <= x.dim(1),
              "slice_cols: range out of bounds");
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> v({r, len});
  const T* src = x.value().data();
  T* dst = v.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < len; ++j) dst[i * len + j] = src[i * c + start + j];
  return detail::make_op<T>(std::move(v), {x}, [start, c](const Var<T>& g) {
    return std::vector<Var<T>>{embed_cols(g, c, start)};
  });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  check_usage(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(0) == b.dim(0),
              "concat_cols: row mismatch");
  const int64_t r = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor<T> v({r, ca + cb});
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* dst = v.data();
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t j = 0; j < ca; ++j) dst[i * (ca + cb) + j] = pa[i * ca + j];
    for (int64_t j = 0; j < cb; ++j) dst[i * (ca + cb) + ca + j] = pb[i * cb + j];
  }
  return detail::make_op<T>(std::move(v), {a, b}, [ca, cb](const Var<T>& g) {
    return std::vector<Var<T>>{slice_cols(g, 0, ca), slice_cols(g, ca, cb)};
  });
}

// ---- reductions and broadcasts (mutually adjoint pairs) ----

template <typename T>
Var<T> broadcast_full(const Var<T>& x, Shape shape);

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  double acc = 0;
  const T* src = x.value().data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(src[i]);
  Tensor<T> v({1, 1});
  v.data()[0] = static_cast<T>(acc);
  Shape prev = x.shape();
  return detail::make_op<T>(std::move(v), {x}, [prev](const Var<T>& g) {
    return std::vector<Var<T>>{broadcast_full(g, prev)};
  });
}

template <typename T>
Var<T> broadcast_full(const Var<T>& x, Shape shape) {
  check_usage(x.numel() == 1, "broadcast_full: source must be scalar");
  Tensor<T> v = Tensor<T>::full(shape, x.value().data()[0]);
  return detail::make_op<T>(std::move(v), {x}, [](const Var<T>& g) {
    return std::vector<Var<T>>{sum_all(g)};
  });
}

template <typename T>
Var<T> tile_cols(const Var<T>& x, int64_t c);

// [R, C] -> [R, 1], summing across columns.
template <typename T>
Var<T> sum_cols(const Var<T>& x) {
  check_usage(x.shape().size() == 2, "sum_cols: expected 2-d tensor");
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> v({r, 1});
  const T* src = x.value().data();
  T* dst = v.data();
  for (int64_t i = 0; i < r; ++i) {
    double acc = 0;
    for (int64_t j = 0; j < c; ++j) acc += static_cast<double>(src[i * c + j]);
    dst[i] = static_cast<T>(acc);
  }
  return detail::make_op<T>(std::move(v), {x}, [c](const Var<T>& g) {
    return std::vector<Var<T>>{tile_cols(g, c)};
  });
}

template <typename T>
Var<T> tile_cols(const Var<T>& x, int64_t c) {
  check_usage(x.shape().size() == 2 && x.dim(1) == 1, "tile_cols: expected [R, 1]");
  const int64_t r = x.dim(0);
  Tensor<T> v({r, c});
  const T* src = x.value().data();
  T* dst = v.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) dst[i * c + j] = src[i];
  return detail::make_op<T>(std::move(v), {x}, [](const Var<T>& g) {
    return std::vector<Var<T>>{sum_cols(g)};
  });
}

template <typename T>
Var<T> tile_rows(const Var<T>& x, int64_t r);

// [R, C] -> [1, C], summing across rows.
template <typename T>
Var<T> sum_rows(const Var<T>& x) {
  check_usage(x.shape().size() == 2, "sum_rows: expected 2-d tensor");
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> v({1, c});
  const T* src = x.value().data();
  T* dst = v.data();
  for (int64_t j = 0; j < c; ++j) {
    double acc = 0;
    for (int64_t i = 0; i < r; ++i) acc += static_cast<double>(src[i * c + j]);
    dst[j] = static_cast<T>(acc);
  }
  return detail::make_op<T>(std::move(v), {x}, [r](const Var<T>& g) {
    return std::vector<Var<T>>{tile_rows(g, r)};
  });
}

template <typename T>
Var<T> tile_rows(const Var<T>& x, int64_t r) {
  check_usage(x.shape().size() == 2 && x.dim(0) == 1, "tile_rows: expected [1, C]");
  const int64_t c = x.dim(1);
  Tensor<T> v({r, c});
  const T* src = x.value().data();
  T* dst = v.data();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) dst[i * c + j] = src[j];
  return detail::make_op<T>(std::move(v), {x}, [](const Var<T>& g) {
    return std::vector<Var<T>>{sum_rows(g)};
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

// Per-row max as a detached constant [R, 1]; used to shift logsumexp.
template <typename T>
Var<T> rowwise_max_detached(const Var<T>& x) {
  check_usage(x.shape().size() == 2, "rowwise_max_detached: expected 2-d tensor");
  const int64_t r = x.dim(0), c = x.dim(1);
  Tensor<T> v({r, 1});
  const T* src = x.value().data();
  for (int64_t i = 0; i < r; ++i) {
    T m = src[i * c];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, src[i * c + j]);
    v.data()[i] = m;
  }
  return constant(std::move(v));
}

// ---- sparse map ops (mutually adjoint pairs) ----

template <typename T>
Var<T> gather_adjoint_op(const Var<T>& g, std::shared_ptr<GatherMap> map, Shape in_shape);

template <typename T>
Var<T> gather_op(const Var<T>& x, std::shared_ptr<GatherMap> map, Shape out_shape) {
  Shape in_shape = x.shape();
  auto v = apply_gather(x.value(), *map, out_shape);
  return detail::make_op<T>(std::move(v), {x}, [map, in_shape](const Var<T>& g) {
    return std::vector<Var<T>>{gather_adjoint_op(g, map, in_shape)};
  });
}

template <typename T>
Var<T> gather_adjoint_op(const Var<T>& g, std::shared_ptr<GatherMap> map, Shape in_shape) {
  Shape out_shape = g.shape();
  auto v = apply_gather_adjoint(g.value(), *map, in_shape);
  return detail::make_op<T>(std::move(v), {g}, [map, out_shape](const Var<T>& gg) {
    return std::vector<Var<T>>{gather_op(gg, map, out_shape)};
  });
}

template <typename T>
Var<T> weighted_adjoint_op(const Var<T>& g, std::shared_ptr<WeightedMap> map, Shape in_shape);

template <typename T>
Var<T> weighted_op(const Var<T>& x, std::shared_ptr<WeightedMap> map, Shape out_shape) {
  Shape in_shape = x.shape();
  auto v = apply_weighted(x.value(), *map, out_shape);
  return detail::make_op<T>(std::move(v), {x}, [map, in_shape](const Var<T>& g) {
    return std::vector<Var<T>>{weighted_adjoint_op(g, map, in_shape)};
  });
}

template <typename T>
Var<T> weighted_adjoint_op(const Var<T>& g, std::shared_ptr<WeightedMap> map, Shape in_shape) {
  Shape out_shape = g.shape();
  auto v = apply_weighted_adjoint(g.value(), *map, in_shape);
  return detail::make_op<T>(std::move(v), {g}, [map, out_shape](const Var<T>& gg) {
    return std::vector<Var<T>>{weighted_op(gg, map, out_shape)};
  });
}

// ---- operator sugar ----

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) {
  return mul(a, b);
}
template <typename T>
Var<T> operator/(const Var<T>& a, const Var<T>& b) {
  return divv(a, b);
}
template <typename T>
Var<T> operator*(const Var<T>& a, double s) {
  return scale(a, s);
}
template <typename T>
Var<T> operator*(double s, const Var<T>& a) {
  return scale(a, s);
}
template <typename T>
Var<T> operator-(const Var<T>& a) {
  return neg(a);
}

// ---- backward pass ----

namespace detail {

template <typename T>
void topo_collect(Node<T>* root, std::vector<Node<T>*>& order) {
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next].node();
      ++next;
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Gradients of a scalar root with respect to `wrt`. With create_graph the
// returned vars are differentiable graph nodes themselves. Entries of `wrt`
// the root does not depend on get zero gradients.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& root, const std::vector<Var<T>>& wrt,
                         bool create_graph = false, bool accumulate_leaf_grads = false) {
  check_usage(root.defined() && root.numel() == 1, "grad: root must be a defined scalar");
  std::unordered_map<Node<T>*, Var<T>> grads;
  if (root.requires_grad()) {
    std::vector<Node<T>*> order;
    detail::topo_collect(root.node(), order);

    const bool prev_mode = detail::g_grad_enabled;
    detail::g_grad_enabled = create_graph;
    grads.emplace(root.node(), constant(Tensor<T>::full(root.shape(), T(1))));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* node = *it;
      auto git = grads.find(node);
      if (git == grads.end()) continue;
      const Var<T>& gout = git->second;
      if (accumulate_leaf_grads && node->is_leaf) {
        if (!node->grad_accum.defined()) {
          node->grad_accum = gout.value().clone();
        } else {
          T* dst = node->grad_accum.data();
          const T* src = gout.value().data();
          const int64_t n = node->grad_accum.numel();
          for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
        }
      }
      if (!node->backward_fn) continue;
      std::vector<Var<T>> input_grads = node->backward_fn(gout);
      check_usage(input_grads.size() == node->inputs.size(),
                  "grad: backward arity mismatch");
      for (size_t k = 0; k < node->inputs.size(); ++k) {
        Node<T>* in = node->inputs[k].node();
        if (!in->requires_grad) continue;
        auto existing = grads.find(in);
        if (existing == grads.end()) {
          grads.emplace(in, input_grads[k]);
        } else {
          existing->second = add(existing->second, input_grads[k]);
        }
      }
    }
    detail::g_grad_enabled = prev_mode;
  }

  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    if (it != grads.end())
      out.push_back(it->second);
    else
      out.push_back(constant(Tensor<T>::zeros(w.shape())));
  }
  return out;
}

// Accumulates d(root)/d(leaf) into each reachable leaf's grad_accum.
template <typename T>
void backward(const Var<T>& root) {
  grad(root, {}, /*create_graph=*/false, /*accumulate_leaf_grads=*/true);
}

}  // namespace ridgegen
