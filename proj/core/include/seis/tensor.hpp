#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace seis {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of 64-bit floats; the value type of everything
/// numeric in this project (panels, feature maps, parameters, losses).
/// Dimensions of size zero are permitted and yield an element count of zero.
/// A default-constructed Tensor is "absent" (no shape, no data); scalars are
/// represented as shape {1}.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }
  bool absent() const { return shape_.empty() && data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset4(std::size_t i0, std::size_t i1, std::size_t i2,
                      std::size_t i3) const {
    return ((i0 * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3;
  }
  double& at4(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) {
    return data_[offset4(i0, i1, i2, i3)];
  }
  double at4(std::size_t i0, std::size_t i1, std::size_t i2,
             std::size_t i3) const {
    return data_[offset4(i0, i1, i2, i3)];
  }
  double& at2(std::size_t i0, std::size_t i1) {
    return data_[i0 * shape_[1] + i1];
  }
  double at2(std::size_t i0, std::size_t i1) const {
    return data_[i0 * shape_[1] + i1];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(double value);
  double sum() const;
  double mean() const;
  double stddev() const;  // population standard deviation
  double min() const;
  double max() const;
  double max_abs() const;
  bool all_finite() const;

  Tensor reshaped(Shape new_shape) const;  // numel must match

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);
  Tensor& operator+=(double s);
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }

private:
  Shape shape_;
  std::vector<double> data_;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);
double mse(const Tensor& a, const Tensor& b);
double mean_abs(const Tensor& a);

}  // namespace seis
