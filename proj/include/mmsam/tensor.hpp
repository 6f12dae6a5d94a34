#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mmsam {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float64 array. Feature maps use NHWC, token sequences
/// use (B, T, C). A meta tensor carries a shape and no storage; every op
/// propagates meta-ness so a model can be traced symbolically.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor meta(Shape shape);
  static Tensor scalar(double value);
  static Tensor like(const Tensor& other, double fill = 0.0);

  const Shape& shape() const noexcept { return shape_; }
  int64_t rank() const noexcept { return static_cast<int64_t>(shape_.size()); }
  /// Size of axis `axis`; negative values count from the back.
  int64_t dim(int64_t axis) const;
  int64_t numel() const noexcept { return mmsam::numel(shape_); }
  bool is_meta() const noexcept { return meta_; }
  bool defined() const noexcept { return !shape_.empty() || !data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  /// Value of a one-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double value);
  /// this += other (same shape).
  void add_(const Tensor& other);

 private:
  Shape shape_;
  std::vector<double> data_;
  bool meta_ = false;
};

bool same_shape(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace mmsam
