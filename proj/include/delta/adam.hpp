#pragma once

#include <cmath>

#include "delta/error.hpp"
#include "delta/params.hpp"

namespace delta {

// Adam with bias correction. Moment buffers live next to each parameter and
// always share its shape. t counts completed steps.
template <typename T>
struct AdamState {
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  long t = 0;
};

template <typename T>
void adam_step(AdamState<T>& state, ParamStore<T>& store) {
  state.t += 1;
  const T b1t = T(1) - static_cast<T>(std::pow(double(state.beta1), double(state.t)));
  const T b2t = T(1) - static_cast<T>(std::pow(double(state.beta2), double(state.t)));
  for (const auto& name : store.names()) {
    Param<T>& p = store.at(name);
    if (!p.grad.data.empty() && p.grad.shape != p.value.shape)
      throw ShapeError("adam_step: grad shape " + shape_str(p.grad.shape) + " vs value " +
                       shape_str(p.value.shape) + " for " + name);
    if (p.grad.data.empty() && p.m.data.empty()) continue; // zero grad, zero moments
    if (p.m.data.empty()) {
      p.m = Tensor<T>(p.value.shape);
      p.v = Tensor<T>(p.value.shape);
    }
    const bool has_grad = !p.grad.data.empty();
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const T g = has_grad ? p.grad.data[i] : T(0);
      p.m.data[i] = state.beta1 * p.m.data[i] + (T(1) - state.beta1) * g;
      p.v.data[i] = state.beta2 * p.v.data[i] + (T(1) - state.beta2) * g * g;
      const T mhat = p.m.data[i] / b1t;
      const T vhat = p.v.data[i] / b2t;
      p.value.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

template <typename T>
void decay_lr(AdamState<T>& state, T factor) {
  if (!(factor > T(0)) || factor > T(1))
    throw UsageError("decay factor must be in (0,1], got " + std::to_string(double(factor)));
  state.lr *= factor;
}

} // namespace delta
