#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "delta/graph.hpp"
#include "delta/params.hpp"

namespace delta {

struct AttentionSpec {
  int dim = 64;
  int heads = 4;
  int ffn_mult = 2;
};

// Scaled dot-product attention over projected Q/K/V, one softmax per head,
// heads re-concatenated. Output rows are convex combinations of value rows.
template <typename T>
Var<T> multihead_attention(Tape<T>& tape, Var<T> q, Var<T> k, Var<T> v, int heads) {
  const Tensor<T>& qv = tape.value(q);
  const Tensor<T>& kv = tape.value(k);
  const int D = qv.shape[1];
  if (D % heads != 0)
    throw ShapeError("attention: head count " + std::to_string(heads) + " does not divide D=" +
                     std::to_string(D));
  if (kv.shape[1] != D || tape.value(v).shape != kv.shape)
    throw ShapeError("attention: K/V shapes disagree with queries");
  const int dh = D / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(double(dh)));
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var<T> qh = slice(q, 1, h * dh, dh);
    Var<T> kh = slice(k, 1, h * dh, dh);
    Var<T> vh = slice(v, 1, h * dh, dh);
    Var<T> logits = mul_scalar(matmul(qh, transpose(kh)), scale);
    outs.push_back(matmul(softmax(logits), vh));
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

template <typename T>
void create_layer_norm(ParamStore<T>& store, const std::string& prefix, int D) {
  store.create(prefix + ".g", Tensor<T>::full({D}, T(1)));
  store.create(prefix + ".b", Tensor<T>({D}));
}

template <typename T>
Var<T> apply_layer_norm(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Var<T> x) {
  auto n = layer_norm(x);
  return add(mul(n, tape.param(store, prefix + ".g")), tape.param(store, prefix + ".b"));
}

template <typename T>
void create_linear(ParamStore<T>& store, const std::string& prefix, int in, int out, Rng& rng) {
  store.create(prefix + ".w", xavier_uniform<T>({in, out}, in, out, rng));
  store.create(prefix + ".b", Tensor<T>({out}));
}

template <typename T>
Var<T> apply_linear(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Var<T> x) {
  return linear(x, tape.param(store, prefix + ".w"), tape.param(store, prefix + ".b"));
}

// Pre-norm transformer block: norm -> attention -> residual, norm -> FFN ->
// residual. Cross blocks normalize the key/value side with their own norm.
template <typename T>
void create_attention_block(ParamStore<T>& store, const std::string& prefix,
                            const AttentionSpec& spec, bool cross, Rng& rng) {
  if (spec.dim % spec.heads != 0)
    throw UsageError("attention block " + prefix + ": heads " + std::to_string(spec.heads) +
                     " do not divide D=" + std::to_string(spec.dim));
  create_layer_norm(store, prefix + ".ln1", spec.dim);
  if (cross) create_layer_norm(store, prefix + ".lnkv", spec.dim);
  create_linear(store, prefix + ".q", spec.dim, spec.dim, rng);
  create_linear(store, prefix + ".k", spec.dim, spec.dim, rng);
  create_linear(store, prefix + ".v", spec.dim, spec.dim, rng);
  create_linear(store, prefix + ".o", spec.dim, spec.dim, rng);
  create_layer_norm(store, prefix + ".ln2", spec.dim);
  create_linear(store, prefix + ".f1", spec.dim, spec.dim * spec.ffn_mult, rng);
  create_linear(store, prefix + ".f2", spec.dim * spec.ffn_mult, spec.dim, rng);
}

template <typename T>
Var<T> attention_block(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                       const AttentionSpec& spec, Var<T> queries, Var<T> keys_values, bool cross) {
  Var<T> nq = apply_layer_norm(tape, store, prefix + ".ln1", queries);
  Var<T> nkv = cross ? apply_layer_norm(tape, store, prefix + ".lnkv", keys_values) : nq;
  Var<T> attn = multihead_attention(tape, apply_linear(tape, store, prefix + ".q", nq),
                                    apply_linear(tape, store, prefix + ".k", nkv),
                                    apply_linear(tape, store, prefix + ".v", nkv), spec.heads);
  Var<T> x = add(queries, apply_linear(tape, store, prefix + ".o", attn));
  Var<T> nx = apply_layer_norm(tape, store, prefix + ".ln2", x);
  Var<T> f = apply_linear(tape, store, prefix + ".f2",
                          gelu(apply_linear(tape, store, prefix + ".f1", nx)));
  return add(x, f);
}

template <typename T>
Var<T> self_attend(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                   const AttentionSpec& spec, Var<T> tokens) {
  return attention_block(tape, store, prefix, spec, tokens, tokens, /*cross=*/false);
}

template <typename T>
Var<T> cross_attend(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                    const AttentionSpec& spec, Var<T> queries, Var<T> keys_values) {
  return attention_block(tape, store, prefix, spec, queries, keys_values, /*cross=*/true);
}

} // namespace delta
