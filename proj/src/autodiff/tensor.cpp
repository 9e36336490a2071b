#include "detguard/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>

#include "detguard/errors.hpp"

namespace detguard::ad {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor", "non-positive dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : Tensor(from_buffer(std::move(shape), Buffer(data.begin(), data.end()))) {}

Tensor Tensor::from_buffer(Shape shape, Buffer data) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  if (t.data_.size() != shape_size(t.shape_))
    throw ShapeError("tensor", "data length " + std::to_string(t.data_.size()) + " does not match shape " +
                                   shape_str(t.shape_));
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<double>(values));
}

std::span<double> Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size())
    throw ShapeError("reshape", shape_str(shape_) + " -> " + shape_str(shape));
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detguard::ad
