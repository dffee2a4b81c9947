#include "csn/params.hpp"

#include <cmath>
#include <stdexcept>

namespace csn {

void ParameterStore::add(const std::string& name, Tensor value, bool trainable) {
  if (entries_.count(name)) throw std::invalid_argument("params: duplicate name '" + name + "'");
  Entry e;
  e.grad = Tensor::zeros(value.shape);
  e.value = std::move(value);
  e.trainable = trainable;
  entries_.emplace(name, std::move(e));
}

const ParameterStore::Entry& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("params: unknown name '" + name + "'");
  return it->second;
}

ParameterStore::Entry& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::invalid_argument("params: unknown name '" + name + "'");
  return it->second;
}

void ParameterStore::zero_grads() {
  for (auto& [name, e] : entries_) {
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0f);
  }
}

Tensor uniform_fan_in(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng) {
  if (fan_in <= 0) throw std::invalid_argument("uniform_fan_in: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace csn
