#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcvit {

template <class S>
using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using MatMap = Eigen::Map<MatrixRM<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const MatrixRM<S>>;

inline std::string shape_str(const std::vector<long>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

// Dense row-major array with an explicit shape. The last axis is the feature
// axis; mat() views the tensor as (numel/last) x last for Eigen arithmetic.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), S(0));
  }

  Tensor(std::vector<long> shape, std::vector<S> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (count(shape_) != static_cast<long>(data_.size()))
      throw std::invalid_argument("tensor: " + shape_str(shape_) + " does not hold " +
                                  std::to_string(data_.size()) + " values");
  }

  static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<long> shape, S v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(std::vector<long> shape) { return full(std::move(shape), S(1)); }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor identity(long n) {
    Tensor t({n, n});
    for (long i = 0; i < n; ++i) t.data_[static_cast<size_t>(i * n + i)] = S(1);
    return t;
  }

  const std::vector<long>& shape() const { return shape_; }
  long ndim() const { return static_cast<long>(shape_.size()); }
  long numel() const { return static_cast<long>(data_.size()); }
  long extent(long axis) const { return shape_.at(static_cast<size_t>(axis)); }

  // trailing-axis matrix view
  long cols() const { return shape_.empty() ? 1 : shape_.back(); }
  long rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  const S& operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  S& at2(long i, long j) { return data_[static_cast<size_t>(i * cols() + j)]; }
  const S& at2(long i, long j) const { return data_[static_cast<size_t>(i * cols() + j)]; }

  MatMap<S> mat() { return MatMap<S>(data_.data(), rows(), cols()); }
  ConstMatMap<S> mat() const { return ConstMatMap<S>(data_.data(), rows(), cols()); }

  Tensor reshaped(std::vector<long> shape) const {
    if (count(shape) != numel())
      throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                                  " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const S& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> t(shape_);
    for (long i = 0; i < numel(); ++i) t[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
    return t;
  }

  static long count(const std::vector<long>& shape) {
    long n = 1;
    for (long e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor: nonpositive extent in " + shape_str(shape));
      n *= e;
    }
    return n;
  }

 private:
  std::vector<long> shape_;
  std::vector<S> data_;
};

template <class S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  S m = 0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dcvit
