#include "sfl/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace sfl {

std::size_t element_count(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {
  if (std::find(shape_.begin(), shape_.end(), 0) != shape_.end())
    throw DimensionError("tensor dimensions must be positive, got " +
                         shape_to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (std::find(shape_.begin(), shape_.end(), 0) != shape_.end())
    throw DimensionError("tensor dimensions must be positive, got " +
                         shape_to_string(shape_));
  if (data_.size() != element_count(shape_))
    throw DimensionError("tensor of shape " + shape_to_string(shape_) +
                         " needs " + std::to_string(element_count(shape_)) +
                         " values, got " + std::to_string(data_.size()));
}

Tensor Tensor::from(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != size())
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                         shape_to_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(),
                      data_.size() * sizeof(float)) == 0);
}

}  // namespace sfl
