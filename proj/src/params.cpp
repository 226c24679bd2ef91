#include "vfl/params.hpp"

#include <stdexcept>

namespace vfl {

size_t ParameterStore::add(std::string name, Tensor value) {
  for (const auto& e : entries_) {
    if (e.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  Tensor grad(value.shape());
  entries_.push_back(ParamEntry{std::move(name), std::move(value), std::move(grad)});
  return entries_.size() - 1;
}

int64_t ParameterStore::total_params() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) e.grad.fill(0.0f);
}

bool ParameterStore::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite() || !e.grad.all_finite()) return false;
  }
  return true;
}

size_t ParameterStore::index_of(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named " + name);
}

}  // namespace vfl
