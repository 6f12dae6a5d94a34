#include "mmsam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mmsam/error.hpp"

namespace mmsam {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (int64_t d : shape_)
    if (d < 0) throw ArgumentError("negative tensor dimension in " + to_string(shape_));
  data_.assign(static_cast<size_t>(mmsam::numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != mmsam::numel(shape_))
    throw ArgumentError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                        to_string(shape_));
}

Tensor Tensor::meta(Shape shape) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.meta_ = true;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::like(const Tensor& other, double fill) {
  if (other.is_meta()) return meta(other.shape());
  return Tensor(other.shape(), fill);
}

int64_t Tensor::dim(int64_t axis) const {
  const int64_t r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ArgumentError("axis out of range for shape " + to_string(shape_));
  return shape_[static_cast<size_t>(axis)];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ArgumentError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (mmsam::numel(shape) != numel())
    throw ArgumentError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_(const Tensor& other) {
  if (other.shape_ != shape_)
    throw ArgumentError("add_ shape mismatch " + to_string(shape_) + " vs " + to_string(other.shape_));
  const size_t n = data_.size();
  double* d = data_.data();
  const double* o = other.data_.data();
  for (size_t i = 0; i < n; ++i) d[i] += o[i];
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b)) throw ArgumentError("max_abs_diff shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b) || a.is_meta() || b.is_meta()) return false;
  return std::memcmp(a.ptr(), b.ptr(), sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace mmsam
