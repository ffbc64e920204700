#include "luq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "luq/errors.hpp"

namespace luq {

Shape::Shape(std::initializer_list<int> dims) : Shape(std::span<const int>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const int> dims) {
  if (dims.size() > 4) throw ShapeError("tensor rank above 4");
  for (int d : dims) {
    if (d <= 0) throw ShapeError("non-positive tensor extent");
    dims_[static_cast<std::size_t>(rank_++)] = d;
  }
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (int i = 0; i < rank_; ++i) n *= static_cast<std::size_t>(dims_[static_cast<std::size_t>(i)]);
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank_; ++i) os << (i ? "x" : "") << dims_[static_cast<std::size_t>(i)];
  os << ']';
  return os.str();
}

bool operator==(const Shape& a, const Shape& b) {
  if (a.rank_ != b.rank_) return false;
  for (int i = 0; i < a.rank_; ++i)
    if (a.dims_[static_cast<std::size_t>(i)] != b.dims_[static_cast<std::size_t>(i)]) return false;
  return true;
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw ShapeError("buffer length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
}

float Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

float Tensor::at(int i, int j) const {
  return data_[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[shape_.rank() - 1]) +
               static_cast<std::size_t>(j)];
}

float& Tensor::at(int i, int j) {
  return data_[static_cast<std::size_t>(i) * static_cast<std::size_t>(shape_[shape_.rank() - 1]) +
               static_cast<std::size_t>(j)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size())
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace luq
