#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace avcount {

/// Dense row-major array of doubles. Network activations use the
/// [N, C, D, H, W] layout; 2D (spectrogram) data uses D = 1.
class Tensor {
 public:
  using Shape = std::vector<int>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  /// Number of elements per leading-axis entry.
  std::size_t stride0() const;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at5(int n, int c, int d, int h, int w);
  double at5(int n, int c, int d, int h, int w) const;

  void fill(double value);
  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;

  /// Copy of entry `n` along the leading axis, keeping a leading axis of 1.
  Tensor sample(int n) const;
  /// Stacks equally-shaped tensors along a new (or existing size-1) leading axis.
  static Tensor stack(std::span<const Tensor> items);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double k);

  bool all_finite() const noexcept;
  std::string shape_string() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Tensor::Shape& shape);

}  // namespace avcount
