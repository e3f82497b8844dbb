#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "delta/error.hpp"
#include "delta/rng.hpp"
#include "delta/tensor.hpp"

namespace delta {

// grad and the Adam moments are allocated on first use, so inference-only
// stores hold just the values. Once allocated they share the value's shape.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m; // Adam first moment
  Tensor<T> v; // Adam second moment

  Tensor<T>& grad_buf() {
    if (grad.data.empty()) grad = Tensor<T>(value.shape);
    return grad;
  }
};

// Named trainable parameters. Iteration follows insertion order so that
// checkpoints and gradient averaging are deterministic.
template <typename T>
class ParamStore {
public:
  Param<T>& create(const std::string& name, Tensor<T> init) {
    if (params_.count(name)) throw DataError("duplicate parameter name: " + name);
    Param<T> p;
    p.value = std::move(init);
    names_.push_back(name);
    return params_.emplace(name, std::move(p)).first->second;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("unknown parameter: " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("unknown parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& name : names_) n += at(name).value.numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : names_) {
      auto& g = at(name).grad.data;
      std::fill(g.begin(), g.end(), T(0)); // unallocated grads are already zero
    }
  }

  void scale_grads(T factor) {
    for (const auto& name : names_)
      for (auto& g : at(name).grad.data) g *= factor;
  }

private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Param<T>> params_;
};

template <typename T>
Tensor<T> xavier_uniform(Shape shape, int fan_in, int fan_out, Rng& rng) {
  Tensor<T> t(std::move(shape));
  double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-a, a));
  return t;
}

} // namespace delta
