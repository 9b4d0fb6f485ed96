#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ridgegen/common.hpp"
#include "ridgegen/rng.hpp"

namespace ridgegen {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense contiguous tensor with shared storage. Copies are shallow; use
// clone() for a deep copy. Reshapes share the underlying buffer.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}

  Tensor(Shape shape, std::shared_ptr<std::vector<T>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_usage(static_cast<int64_t>(data_->size()) == shape_numel(shape_),
                "tensor: storage size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.begin(), t.end(), v);
    return t;
  }

  static Tensor from(std::vector<T> values, Shape shape) {
    check_usage(static_cast<int64_t>(values.size()) == shape_numel(shape),
                "tensor: value count does not match shape");
    return Tensor(std::move(shape), std::make_shared<std::vector<T>>(std::move(values)));
  }

  static Tensor scalar(T v) { return full({1}, v); }

  static Tensor randn(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t) v = static_cast<T>(rng.normal());
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  T& operator[](int64_t i) { return (*data_)[i]; }
  const T& operator[](int64_t i) const { return (*data_)[i]; }

  T* begin() { return data(); }
  T* end() { return data() + numel(); }
  const T* begin() const { return data(); }
  const T* end() const { return data() + numel(); }

  // 2-D accessor (row-major).
  T& at2(int64_t r, int64_t c) { return (*data_)[r * shape_[1] + c]; }
  const T& at2(int64_t r, int64_t c) const { return (*data_)[r * shape_[1] + c]; }

  Tensor reshaped(Shape shape) const {
    check_usage(shape_numel(shape) == numel(),
                "reshape: element count mismatch " + shape_str(shape_) + " -> " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  Tensor clone() const {
    return Tensor(shape_, std::make_shared<std::vector<T>>(*data_));
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    const T* s = data();
    U* d = out.data();
    for (int64_t i = 0; i < numel(); ++i) d[i] = static_cast<U>(s[i]);
    return out;
  }

  bool all_finite() const {
    for (const T& v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape();
}

}  // namespace ridgegen
