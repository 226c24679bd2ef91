#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vfl {

using RowMajorMatrixXf =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajorMatrixXf>;
using ConstMatMap = Eigen::Map<const RowMajorMatrixXf>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXf>;

int64_t shape_numel(std::span<const int64_t> shape);
std::string shape_str(std::span<const int64_t> shape);

/// Dense n-dimensional array of 32-bit floats, row-major. The universal
/// numeric carrier: inputs, embeddings, logits and gradients all live here.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);  // zero-filled
  Tensor(std::vector<int64_t> shape, std::vector<float> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, float value);
  static Tensor of(std::vector<int64_t> shape, std::initializer_list<float> values);

  const std::vector<int64_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  int64_t dim(size_t i) const { return shape_.at(i); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  void fill(float v);
  bool all_finite() const;

  /// Rank-2 Eigen view; throws unless rank() == 2.
  MatMap mat();
  ConstMatMap mat() const;

  /// Reshaped rows x cols view over the flat storage (rows*cols must equal numel).
  MatMap as_mat(int64_t rows, int64_t cols);
  ConstMatMap as_mat(int64_t rows, int64_t cols) const;

  VecMap vec() { return VecMap(data_.data(), numel()); }
  ConstVecMap vec() const { return ConstVecMap(data_.data(), numel()); }

  /// Same-shape tensor reshaped in place; numel must be preserved.
  Tensor reshaped(std::vector<int64_t> new_shape) const;

 private:
  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

}  // namespace vfl
