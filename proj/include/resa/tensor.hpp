#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace resa {

using Index = std::ptrdiff_t;
using Dims = std::vector<Index>;

/// Raised when tensor dimensions do not satisfy an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ',';
    os << dims[i];
  }
  os << ')';
  return os.str();
}

inline Index dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major N-dimensional array. Feature maps use NCHW order.
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Dims dims, Scalar fill = Scalar(0)) : dims_(std::move(dims)) {
    for (Index d : dims_) {
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims_));
    }
    data_ = Vector<Scalar>::Constant(dims_product(dims_), fill);
  }

  Tensor(Dims dims, std::initializer_list<Scalar> values) : Tensor(std::move(dims)) {
    if (static_cast<Index>(values.size()) != size()) {
      throw ShapeError("initializer length does not match " + dims_to_string(dims_));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

  const Dims& dims() const { return dims_; }
  Index dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const { return dims_.size(); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  /// Flat Eigen view of the whole buffer.
  Vector<Scalar>& flat() { return data_; }
  const Vector<Scalar>& flat() const { return data_; }

  MatrixMap matrix(Index rows, Index cols, Index offset = 0) {
    return MatrixMap(data_.data() + offset, rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols, Index offset = 0) const {
    return ConstMatrixMap(data_.data() + offset, rows, cols);
  }

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }

  Scalar& operator()(Index n, Index c, Index i, Index j) {
    return data_[((n * dims_[1] + c) * dims_[2] + i) * dims_[3] + j];
  }
  const Scalar& operator()(Index n, Index c, Index i, Index j) const {
    return data_[((n * dims_[1] + c) * dims_[2] + i) * dims_[3] + j];
  }
  Scalar& operator()(Index r, Index c) { return data_[r * dims_[1] + c]; }
  const Scalar& operator()(Index r, Index c) const { return data_[r * dims_[1] + c]; }

  void fill(Scalar v) { data_.setConstant(v); }
  void set_zero() { data_.setZero(); }

  Tensor reshaped(Dims dims) const {
    if (dims_product(dims) != size()) {
      throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    }
    Tensor out;
    out.dims_ = std::move(dims);
    out.data_ = data_;
    return out;
  }

  template <typename To>
  Tensor<To> cast() const {
    Tensor<To> out(dims_);
    out.flat() = data_.template cast<To>();
    return out;
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_dims(*this, other, "+=");
    data_ += other.data_;
    return *this;
  }
  Tensor& operator-=(const Tensor& other) {
    require_same_dims(*this, other, "-=");
    data_ -= other.data_;
    return *this;
  }
  Tensor& operator*=(Scalar s) {
    data_ *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

  static void require_same_dims(const Tensor& a, const Tensor& b, const char* what) {
    if (a.dims_ != b.dims_) {
      throw ShapeError(std::string(what) + ": dims mismatch " + dims_to_string(a.dims_) + " vs " +
                       dims_to_string(b.dims_));
    }
  }

 private:
  Dims dims_;
  Vector<Scalar> data_;
};

/// Unpacked dims of an NCHW feature map.
struct Nchw {
  Index n, c, h, w;
  Index plane() const { return h * w; }
};

template <typename Scalar>
Nchw nchw(const Tensor<Scalar>& x, const char* what = "tensor") {
  if (x.rank() != 4) {
    throw ShapeError(std::string(what) + " must be NCHW, got " + dims_to_string(x.dims()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

/// Convolution weights (out_channels, in_channels, kh, kw) with optional bias (out_channels).
template <typename Scalar>
struct ConvKernel {
  Tensor<Scalar> weight;
  std::optional<Tensor<Scalar>> bias;

  ConvKernel() = default;
  ConvKernel(Index out_channels, Index in_channels, Index kh, Index kw, bool with_bias = false)
      : weight({out_channels, in_channels, kh, kw}) {
    if (with_bias) bias = Tensor<Scalar>({out_channels});
  }

  Index out_channels() const { return weight.dim(0); }
  Index in_channels() const { return weight.dim(1); }
  Index kh() const { return weight.dim(2); }
  Index kw() const { return weight.dim(3); }

  template <typename To>
  ConvKernel<To> cast() const {
    ConvKernel<To> out;
    out.weight = weight.template cast<To>();
    if (bias) out.bias = bias->template cast<To>();
    return out;
  }
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Tensor<Scalar>::require_same_dims(a, b, "max_abs_diff");
  if (a.size() == 0) return Scalar(0);
  return (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

template <typename Scalar>
Scalar dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  Tensor<Scalar>::require_same_dims(a, b, "dot");
  return a.flat().dot(b.flat());
}

}  // namespace resa
