#include "avcount/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "avcount/errors.hpp"

namespace avcount {

std::size_t shape_numel(const Tensor::Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ArgumentError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != data_.size())
    throw ArgumentError("tensor value count does not match shape " + shape_string());
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ArgumentError("tensor axis out of range");
  return shape_[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::stride0() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / static_cast<std::size_t>(shape_[0]);
}

double& Tensor::at5(int n, int c, int d, int h, int w) {
  const auto& s = shape_;
  return data_[((((static_cast<std::size_t>(n) * s[1] + c) * s[2] + d) * s[3] + h) * s[4] + w)];
}

double Tensor::at5(int n, int c, int d, int h, int w) const {
  const auto& s = shape_;
  return data_[((((static_cast<std::size_t>(n) * s[1] + c) * s[2] + d) * s[3] + h) * s[4] + w)];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) throw ArgumentError("reshape changes element count");
  shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

Tensor Tensor::sample(int n) const {
  if (n < 0 || n >= dim(0)) throw ArgumentError("sample index out of range");
  Shape s = shape_;
  s[0] = 1;
  const std::size_t step = stride0();
  auto first = data_.begin() + static_cast<std::ptrdiff_t>(step * static_cast<std::size_t>(n));
  return Tensor(std::move(s), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(step)));
}

Tensor Tensor::stack(std::span<const Tensor> items) {
  if (items.empty()) throw ArgumentError("cannot stack zero tensors");
  Shape inner = items.front().shape();
  const bool has_unit_lead = !inner.empty() && inner[0] == 1;
  Shape out_shape;
  if (has_unit_lead) {
    out_shape = inner;
    out_shape[0] = static_cast<int>(items.size());
  } else {
    out_shape.push_back(static_cast<int>(items.size()));
    out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  }
  std::vector<double> values;
  values.reserve(items.front().size() * items.size());
  for (const auto& t : items) {
    if (t.shape() != inner) throw ArgumentError("stack: shape mismatch " + t.shape_string() + " vs first item");
    values.insert(values.end(), t.storage().begin(), t.storage().end());
  }
  return Tensor(std::move(out_shape), std::move(values));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) throw ArgumentError("tensor += shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double k) {
  for (double& v : data_) v *= k;
  return *this;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

}  // namespace avcount
