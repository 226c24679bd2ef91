#pragma once

#include <string>
#include <vector>

#include "vfl/tensor.hpp"

namespace vfl {

struct ParamEntry {
  std::string name;
  Tensor value;
  Tensor grad;  // always same shape as value; accumulated by backward passes
};

/// Ordered, name-unique collection of trainable tensors with their gradients.
/// Iteration order is insertion order and is part of the determinism contract.
class ParameterStore {
 public:
  size_t add(std::string name, Tensor value);

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  ParamEntry& operator[](size_t i) { return entries_[i]; }
  const ParamEntry& operator[](size_t i) const { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  int64_t total_params() const;
  void zero_grads();
  bool all_finite() const;

  /// Index of a named entry; throws if absent.
  size_t index_of(const std::string& name) const;

 private:
  std::vector<ParamEntry> entries_;
};

}  // namespace vfl
