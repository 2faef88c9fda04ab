#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace knormlab {

// Compute/storage precision. Verification suites always run in Double;
// Single is offered for training runs and rounds every stored value through
// float so results are representable in 32-bit.
enum class Precision { kSingle, kDouble };

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major n-dimensional array. Plain value type: ops return fresh
// tensors, nothing aliases.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Precision precision = Precision::kDouble);
  Tensor(Shape shape, std::vector<double> data,
         Precision precision = Precision::kDouble);

  static Tensor zeros(Shape shape, Precision p = Precision::kDouble);
  static Tensor full(Shape shape, double value,
                     Precision p = Precision::kDouble);
  static Tensor scalar(double value, Precision p = Precision::kDouble);

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  Precision precision() const { return precision_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-D accessors (NCHW), used all over the conv/norm code.
  double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(std::int64_t n, std::int64_t c, std::int64_t h,
             std::int64_t w) const {
    return data_[static_cast<std::size_t>(
        ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double& at2(std::int64_t r, std::int64_t c) {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }
  double at2(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }

  bool is_scalar() const { return numel() == 1; }
  double scalar_value() const { return data_[0]; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Rounds every element through float. No-op for Double tensors.
  void enforce_precision();
  Tensor to(Precision p) const;

 private:
  Shape shape_;
  std::vector<double> data_;
  Precision precision_ = Precision::kDouble;
};

// Elementwise and vector helpers used outside the autodiff tape
// (data pipeline, parameter flattening, aggregation).
double l2_norm(const std::vector<double>& v);
double dot(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace knormlab
