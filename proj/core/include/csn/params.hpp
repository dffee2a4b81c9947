#pragma once

#include <functional>
#include <map>
#include <string>

#include "csn/autodiff.hpp"
#include "csn/rng.hpp"
#include "csn/tensor.hpp"

namespace csn {

// Named learnable arrays plus gradient slots. Names follow
// "<module>.<layer>.<role>", e.g. "csa.2.Wq".
class ParameterStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;  // same shape, zero-initialized
    bool trainable = true;
  };

  void add(const std::string& name, Tensor value, bool trainable = true);
  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& at(const std::string& name) const;
  Entry& at(const std::string& name);
  std::size_t size() const { return entries_.size(); }

  // Deterministic (name-sorted) iteration.
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  void zero_grads();

  // Inserts one leaf per parameter into the tape. Parameters for which
  // `active` returns false enter as constants: backward neither reaches nor
  // reports them, which is how phase freezing is implemented.
  template <typename T>
  std::map<std::string, NodeId> make_leaves(GraphT<T>& g,
                                            const std::function<bool(const std::string&)>& active) const {
    std::map<std::string, NodeId> out;
    for (const auto& [name, e] : entries_) {
      const bool req = e.trainable && active(name);
      if constexpr (std::is_same_v<T, float>) {
        out[name] = g.leaf(e.value, req, name);
      } else {
        out[name] = g.leaf(e.value.template cast<T>(), req, name);
      }
    }
    return out;
  }

  template <typename T>
  std::map<std::string, NodeId> make_leaves(GraphT<T>& g) const {
    return make_leaves<T>(g, [](const std::string&) { return true; });
  }

 private:
  std::map<std::string, Entry> entries_;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) fill.
Tensor uniform_fan_in(std::vector<std::int64_t> shape, std::int64_t fan_in, Rng& rng);

}  // namespace csn
