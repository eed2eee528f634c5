#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace mic {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline void validate_shape(const Shape& s) {
  if (s.empty()) throw DimensionError("tensor rank must be >= 1");
  for (auto d : s)
    if (d == 0) throw DimensionError("tensor shape " + shape_str(s) + " has a zero extent");
}

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, double>) return "f64";
  else static_assert(sizeof(T) == 0, "unsupported tensor dtype");
}

/// Dense row-major tensor. Rank >= 1 and every extent >= 1.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T{}) {}

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  Tensor reshaped(Shape s) const {
    validate_shape(s);
    if (shape_numel(s) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& o) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw DimensionError("index rank " + std::to_string(idx.size()) + " does not match shape " +
                           shape_str(shape_));
    std::size_t off = 0, k = 0;
    for (auto i : idx) {
      if (i >= shape_[k]) throw std::out_of_range("tensor index out of range");
      off = off * shape_[k] + i;
      ++k;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// c[i,j] = sum_t a[i,t] * b[t,j], accumulated in increasing t.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* pc = c.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = pc + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = pa[i * k + t];
      const T* brow = pb + t * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor<T> t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

/// Zero-pads the two spatial axes of an NHWC tensor.
template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left,
                std::size_t right) {
  if (x.rank() != 4) throw DimensionError("pad2d expects NHWC, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t oh = h + top + bottom, ow = w + left + right;
  Tensor<T> y({n, oh, ow, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i) {
      const T* src = x.ptr() + ((b * h + i) * w) * c;
      T* dst = y.ptr() + ((b * oh + i + top) * ow + left) * c;
      std::copy(src, src + w * c, dst);
    }
  return y;
}

/// Inverse of pad2d: removes the given border counts from an NHWC tensor.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left,
                 std::size_t right) {
  if (x.rank() != 4) throw DimensionError("crop2d expects NHWC, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (top + bottom >= h || left + right >= w)
    throw DimensionError("crop2d removes the whole of " + shape_str(x.shape()));
  const std::size_t oh = h - top - bottom, ow = w - left - right;
  Tensor<T> y({n, oh, ow, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < oh; ++i) {
      const T* src = x.ptr() + ((b * h + i + top) * w + left) * c;
      std::copy(src, src + ow * c, y.ptr() + ((b * oh + i) * ow) * c);
    }
  return y;
}

/// Arithmetic mean over `axes`; those axes are dropped from the result shape
/// (a full reduction yields shape [1]).
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  std::set<std::size_t> ax;
  for (auto a : axes) {
    if (a >= x.rank())
      throw DimensionError("reduce_mean axis " + std::to_string(a) + " out of range for " +
                           shape_str(x.shape()));
    if (!ax.insert(a).second)
      throw DimensionError("reduce_mean duplicate axis " + std::to_string(a));
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t d = 0; d < x.rank(); ++d) {
    if (ax.count(d)) count *= x.dim(d);
    else out_shape.push_back(x.dim(d));
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Accumulate in row-major order of the input.
  std::vector<double> acc(shape_numel(out_shape), 0.0);
  const Shape& s = x.shape();
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < s.size(); ++d)
      if (!ax.count(d)) o = o * s[d] + idx[d];
    acc[o] += static_cast<double>(x[i]);
    for (std::size_t d = s.size(); d-- > 0;) {
      if (++idx[d] < s[d]) break;
      idx[d] = 0;
    }
  }
  Tensor<T> y(out_shape);
  for (std::size_t i = 0; i < acc.size(); ++i) y[i] = static_cast<T>(acc[i] / double(count));
  return y;
}

}  // namespace mic
