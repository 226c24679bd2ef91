#include "vfl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace vfl {

int64_t shape_numel(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape dims must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(std::span<const int64_t> shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::full(std::vector<int64_t> shape, float value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::of(std::vector<int64_t> shape, std::initializer_list<float> values) {
  return Tensor(std::move(shape), std::vector<float>(values));
}

void Tensor::fill(float v) {
  for (auto& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (float x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

MatMap Tensor::mat() {
  if (rank() != 2) throw std::invalid_argument("mat() needs rank-2 tensor, got " + shape_str(shape_));
  return MatMap(data_.data(), shape_[0], shape_[1]);
}

ConstMatMap Tensor::mat() const {
  if (rank() != 2) throw std::invalid_argument("mat() needs rank-2 tensor, got " + shape_str(shape_));
  return ConstMatMap(data_.data(), shape_[0], shape_[1]);
}

MatMap Tensor::as_mat(int64_t rows, int64_t cols) {
  if (rows * cols != numel()) throw std::invalid_argument("as_mat: bad view size");
  return MatMap(data_.data(), rows, cols);
}

ConstMatMap Tensor::as_mat(int64_t rows, int64_t cols) const {
  if (rows * cols != numel()) throw std::invalid_argument("as_mat: bad view size");
  return ConstMatMap(data_.data(), rows, cols);
}

Tensor Tensor::reshaped(std::vector<int64_t> new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                                " changes element count");
  }
  return Tensor(std::move(new_shape), data_);
}

}  // namespace vfl
