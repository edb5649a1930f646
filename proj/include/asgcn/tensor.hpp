#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "asgcn/errors.hpp"

namespace asgcn {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense double-precision tensor, row-major. Values are immutable by
// convention once an operation has produced them; mutation is reserved
// for construction sites and the optimizer.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::initializer_list<double> v) {
    return Tensor({v.size()}, std::vector<double>(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> m) {
    Shape s{m.size(), m.begin()->size()};
    std::vector<double> d;
    d.reserve(shape_numel(s));
    for (const auto& r : m) {
      if (r.size() != s[1]) throw DimensionError("ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor(std::move(s), std::move(d));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw DimensionError("reshape " + shape_str(shape_) + " -> " +
                           shape_str(s) + ": element count mismatch");
    Tensor out;
    out.shape_ = std::move(s);
    out.data_ = data_;
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double c) {
    for (double& v : data_) v *= c;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double c) { return a *= c; }
  friend Tensor operator*(double c, Tensor a) { return a *= c; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  void require_same(const Tensor& o, const char* op) const {
    if (!same_shape(o))
      throw DimensionError(std::string("tensor ") + op + ": shape " +
                           shape_str(shape_) + " vs " + shape_str(o.shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

using EigenMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenMat>;
using ConstMatMap = Eigen::Map<const EigenMat>;

inline ConstMatMap as_matrix(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected rank-2 tensor, got " +
                                          shape_str(t.shape()));
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.extent(0)),
                     static_cast<Eigen::Index>(t.extent(1)));
}

inline MatMap as_matrix(Tensor& t) {
  if (t.rank() != 2) throw DimensionError("expected rank-2 tensor, got " +
                                          shape_str(t.shape()));
  return MatMap(t.data(), static_cast<Eigen::Index>(t.extent(0)),
                static_cast<Eigen::Index>(t.extent(1)));
}

// out = a x b. The workhorse behind every weight application.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw DimensionError("matmul: incompatible shapes " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({a.extent(0), b.extent(1)});
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("hadamard: shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out({a.extent(1), a.extent(0)});
  as_matrix(out) = as_matrix(a).transpose();
  return out;
}

inline Tensor identity(std::size_t n) {
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank())
    throw DimensionError("concat: rank mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  if (axis >= a.rank()) throw DimensionError("concat: axis out of range");
  for (std::size_t d = 0; d < a.rank(); ++d)
    if (d != axis && a.extent(d) != b.extent(d))
      throw DimensionError("concat: incompatible shapes " +
                           shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()) + " along axis " +
                           std::to_string(axis));

  Shape os = a.shape();
  os[axis] += b.extent(axis);
  Tensor out(os);

  // outer = product of extents before axis, inner = after.
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.extent(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.extent(d);
  const std::size_t wa = a.extent(axis) * inner;
  const std::size_t wb = b.extent(axis) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(a.data() + o * wa, a.data() + (o + 1) * wa,
              out.data() + o * (wa + wb));
    std::copy(b.data() + o * wb, b.data() + (o + 1) * wb,
              out.data() + o * (wa + wb) + wa);
  }
  return out;
}

}  // namespace asgcn
