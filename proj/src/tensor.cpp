#include "knormlab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "knormlab/errors.hpp"

namespace knormlab {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, Precision precision)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(shape_numel(shape_)), 0.0),
      precision_(precision) {
  for (std::int64_t d : shape_) {
    if (d <= 0)
      throw ContractError("tensor shape must be positive, got " +
                          shape_to_string(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data, Precision precision)
    : shape_(std::move(shape)), data_(std::move(data)), precision_(precision) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size()))
    throw ContractError("tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_to_string(shape_));
  enforce_precision();
}

Tensor Tensor::zeros(Shape shape, Precision p) { return Tensor(std::move(shape), p); }

Tensor Tensor::full(Shape shape, double value, Precision p) {
  Tensor t(std::move(shape), p);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = value;
  t.enforce_precision();
  return t;
}

Tensor Tensor::scalar(double value, Precision p) {
  return Tensor({1}, {value}, p);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::enforce_precision() {
  if (precision_ == Precision::kDouble) return;
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

Tensor Tensor::to(Precision p) const {
  Tensor t(shape_, data_, p);
  return t;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace knormlab
