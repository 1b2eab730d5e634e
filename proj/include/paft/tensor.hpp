// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "paft/error.hpp"

namespace paft {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major array of doubles. Every element is finite; construction
/// rejects NaN and infinities.
class Tensor {
 public:
  /// Rank-0 scalar 0.0.
  Tensor() : data_(1, 0.0) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw Error(ErrorCode::kShapeMismatch,
                  "data length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_to_string(shape_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw Error(ErrorCode::kNonFiniteResult, "element " + std::to_string(i) + " is not finite");
      }
    }
  }

  /// Rank-1 tensor holding `values`.
  static Tensor vector(std::vector<double> values) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values));
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor filled(Shape shape, double value) {
    const std::size_t n = element_count(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element (row, col) of a rank-2 tensor.
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_.at(1) + col]; }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  /// Bitwise equality of shape and values (distinguishes -0.0 from 0.0).
  bool bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(data_[i]) != std::bit_cast<std::uint64_t>(other.data_[i]))
        return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_to_string(a.shape()) +
                                               " vs " + shape_to_string(b.shape()));
  }
}

template <typename F>
Tensor map2(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  return detail::map2(a, b, std::plus<>());
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  return detail::map2(a, b, std::minus<>());
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor(a.shape(), std::move(out));
}

/// a + s * b, elementwise.
inline Tensor axpy(const Tensor& a, double s, const Tensor& b) {
  detail::require_same_shape(a, b, "axpy");
  return detail::map2(a, b, [s](double x, double y) { return x + s * y; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw Error(ErrorCode::kShapeMismatch,
                "matmul: " + shape_to_string(a.shape()) + " x " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * b[p * n + j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

inline double l1_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += std::abs(v);
  return s;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace paft
