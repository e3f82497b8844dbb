#pragma once

#include <string>

#include "delta/attention.hpp"
#include "delta/graph.hpp"

namespace delta {

// Token-wise GRU, one cell shared across all N rows:
//   z = sigma(Wz [x,h] + bz), r = sigma(Wr [x,h] + br),
//   hhat = tanh(Wh [x, r*h] + bh), h' = (1-z)*h + z*hhat.
// h' is a convex combination of h and a tanh value, so |h'| <= max(|h|, 1).
template <typename T>
void create_gru(ParamStore<T>& store, const std::string& prefix, int D, Rng& rng) {
  create_linear(store, prefix + ".z", 2 * D, D, rng);
  create_linear(store, prefix + ".r", 2 * D, D, rng);
  create_linear(store, prefix + ".h", 2 * D, D, rng);
}

template <typename T>
Var<T> gru_update(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Var<T> x,
                  Var<T> h) {
  if (tape.value(x).shape != tape.value(h).shape)
    throw ShapeError("gru_update: input " + shape_str(tape.value(x).shape) + " vs hidden " +
                     shape_str(tape.value(h).shape));
  Var<T> xh = concat<T>({x, h}, 1);
  Var<T> z = sigmoid(apply_linear(tape, store, prefix + ".z", xh));
  Var<T> r = sigmoid(apply_linear(tape, store, prefix + ".r", xh));
  Var<T> hhat = tanh_op(apply_linear(tape, store, prefix + ".h", concat<T>({x, mul(r, h)}, 1)));
  return add(sub(h, mul(z, h)), mul(z, hhat));
}

template <typename T>
struct Propagated {
  Var<T> memory; // (rows, D)
  Var<T> tokens; // (N, D)
};

// CA_P1: events write into the propagation memory; CA_P2: the LiDAR token
// state queries the updated memory to advance itself to the current window.
template <typename T>
Propagated<T> propagate_lidar(Tape<T>& tape, ParamStore<T>& store, const AttentionSpec& spec,
                              Var<T> prop_mem, Var<T> event_tokens, Var<T> lidar_tokens) {
  Propagated<T> out;
  out.memory = cross_attend(tape, store, "ca_p1", spec, prop_mem, event_tokens);
  out.tokens = cross_attend(tape, store, "ca_p2", spec, lidar_tokens, out.memory);
  return out;
}

} // namespace delta
