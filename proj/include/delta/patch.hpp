#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "delta/graph.hpp"
#include "delta/params.hpp"

namespace delta {

// Fixed 2-D sinusoidal embedding: the first D/2 dims encode the row index, the
// second D/2 the column index, each as interleaved sine/cosine pairs at
// geometric frequencies (base 10000). Rows are pairwise distinct.
template <typename T>
Tensor<T> make_positional_embedding(int hp, int wp, int d) {
  if (d % 4 != 0) throw UsageError("positional embedding needs D divisible by 4, got " + std::to_string(d));
  const int half = d / 2;
  std::vector<double> inv_freq(half);
  for (int i = 0; i < half; ++i)
    inv_freq[i] = 1.0 / std::pow(10000.0, 2.0 * (i / 2) / double(half));
  Tensor<T> emb({hp * wp, d});
  for (int r = 0; r < hp; ++r)
    for (int c = 0; c < wp; ++c) {
      T* row = &emb.data[std::size_t(r * wp + c) * d];
      for (int i = 0; i < half; ++i) {
        const double vy = r * inv_freq[i];
        const double vx = c * inv_freq[i];
        row[i] = static_cast<T>(i % 2 == 0 ? std::sin(vy) : std::cos(vy));
        row[half + i] = static_cast<T>(i % 2 == 0 ? std::sin(vx) : std::cos(vx));
      }
    }
  return emb;
}

// Stage layout of a patch-encoding head: strided 3x3 convolutions whose
// strides multiply to P, with geometric channel growth up to D.
struct StagePlan {
  std::vector<int> strides;  // 2s and 3s, largest first
  std::vector<int> channels; // per-stage output channels, last is D
  std::vector<int> divisors; // cumulative resolution divisor after each stage
};

inline StagePlan encoder_stage_plan(int P, int D) {
  if (P < 2) throw UsageError("patch size must be >= 2");
  std::vector<int> strides;
  int p = P;
  while (p % 3 == 0) {
    strides.push_back(3);
    p /= 3;
  }
  while (p % 2 == 0) {
    strides.push_back(2);
    p /= 2;
  }
  if (p != 1)
    throw UsageError("patch size " + std::to_string(P) + " has no stage factorization into 2s and 3s");
  StagePlan plan;
  plan.strides = strides;
  const int n = static_cast<int>(strides.size());
  int div = 1;
  for (int i = 0; i < n; ++i) {
    plan.channels.push_back(std::max(1, D >> (n - 1 - i)));
    div *= strides[i];
    plan.divisors.push_back(div);
  }
  return plan;
}

// Upsampling factors of the decoding head (composed product = P). Two stages
// when possible: 16 = 4*4, 12 = 4*3; small P collapses to a single stage.
inline std::vector<int> decoder_factor_plan(int P) {
  const StagePlan enc = encoder_stage_plan(P, 4);
  const int n = static_cast<int>(enc.strides.size());
  if (n == 1) return {enc.strides[0]};
  int f1 = enc.strides[n - 1] * enc.strides[n - 2]; // undo the two deepest stages first
  int f2 = 1;
  for (int i = 0; i < n - 2; ++i) f2 *= enc.strides[i];
  if (f2 == 1) return {f1};
  return {f1, f2};
}

template <typename T>
void create_conv(ParamStore<T>& store, const std::string& prefix, int kh, int kw, int ci, int co,
                 Rng& rng, bool zero_init = false) {
  if (zero_init) {
    store.create(prefix + ".w", Tensor<T>({kh, kw, ci, co}));
  } else {
    store.create(prefix + ".w", xavier_uniform<T>({kh, kw, ci, co}, kh * kw * ci, kh * kw * co, rng));
  }
  store.create(prefix + ".b", Tensor<T>({co}));
}

template <typename T>
Var<T> apply_conv(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Var<T> x,
                  int stride, int pad) {
  auto y = conv2d(x, tape.param(store, prefix + ".w"), stride, pad);
  return add(y, tape.param(store, prefix + ".b"));
}

template <typename T>
void create_encoder_head(ParamStore<T>& store, const std::string& prefix, int c_in, int P, int D,
                         Rng& rng) {
  const StagePlan plan = encoder_stage_plan(P, D);
  int ci = c_in;
  for (std::size_t i = 0; i < plan.strides.size(); ++i) {
    create_conv(store, prefix + ".c" + std::to_string(i), 3, 3, ci, plan.channels[i], rng);
    ci = plan.channels[i];
  }
}

template <typename T>
struct EncodedPatches {
  Var<T> tokens; // (N, D)
  int hp = 0, wp = 0;
  std::vector<Var<T>> stage_maps; // per-stage feature maps, (H/div_i, W/div_i, ch_i)
  std::vector<int> stage_divisors;
  std::vector<int> stage_channels;
};

// Raster (H, W, C) -> tokens (N, D), keeping each stage's feature map for
// decoder guidance and skip use. GELU between stages, none after the last.
template <typename T>
EncodedPatches<T> encode_patches(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix,
                                 Var<T> raster, int P, int D) {
  // copy the extents: node storage reallocates as stages are appended
  const Shape rshape = tape.value(raster).shape;
  if (rshape.size() != 3 || rshape[0] % P != 0 || rshape[1] % P != 0)
    throw ShapeError("encode_patches: raster " + shape_str(rshape) + " is not a multiple of P=" +
                     std::to_string(P) + "; pad first");
  const StagePlan plan = encoder_stage_plan(P, D);
  EncodedPatches<T> out;
  Var<T> x = raster;
  for (std::size_t i = 0; i < plan.strides.size(); ++i) {
    const int stride = plan.strides[i];
    const int pad = stride == 3 ? 0 : 1;
    x = apply_conv(tape, store, prefix + ".c" + std::to_string(i), x, stride, pad);
    if (i + 1 < plan.strides.size()) x = gelu(x);
    out.stage_maps.push_back(x);
    out.stage_divisors.push_back(plan.divisors[i]);
    out.stage_channels.push_back(plan.channels[i]);
  }
  out.hp = rshape[0] / P;
  out.wp = rshape[1] / P;
  out.tokens = reshape(x, {out.hp * out.wp, D});
  return out;
}

inline int decoder_mask_hidden(int D) { return std::min(256, std::max(16, D / 2)); }

template <typename T>
void create_decoder_head(ParamStore<T>& store, const std::string& prefix, int P, int D, Rng& rng) {
  const StagePlan enc = encoder_stage_plan(P, D);
  const std::vector<int> factors = decoder_factor_plan(P);
  const int mh = decoder_mask_hidden(D);
  int cur = D;
  int div = P;
  for (std::size_t j = 0; j < factors.size(); ++j) {
    const int f = factors[j];
    // guidance channels at this resolution
    int guide = -1;
    for (std::size_t i = 0; i < enc.divisors.size(); ++i)
      if (enc.divisors[i] == div) guide = enc.channels[i];
    if (guide < 0) throw ShapeError("decoder: no encoder stage at divisor " + std::to_string(div));
    const std::string up = prefix + ".up" + std::to_string(j);
    create_conv(store, up + ".mask0", 3, 3, cur + guide, mh, rng);
    create_conv(store, up + ".mask1", 1, 1, mh, f * f * 9, rng, /*zero_init=*/true);
    div /= f;
    if (j + 1 < factors.size()) {
      int next_guide = -1;
      for (std::size_t i = 0; i < enc.divisors.size(); ++i)
        if (enc.divisors[i] == div) next_guide = enc.channels[i];
      if (next_guide < 0) throw ShapeError("decoder: no encoder stage at divisor " + std::to_string(div));
      create_conv(store, up + ".reduce", 1, 1, cur, next_guide, rng);
      cur = next_guide;
    }
  }
  create_conv(store, prefix + ".out", 1, 1, cur, 1, rng, /*zero_init=*/true);
}

// Tokens (N, D) -> depth (H, W, 1) in [0,1]. Each upsampling stage builds its
// convex-combination mask from the current map concatenated with the encoding
// head's feature map of the same resolution ("guided" upsampling); the final
// 1x1 projection is squashed by a sigmoid.
template <typename T>
Var<T> decode_depth(Tape<T>& tape, ParamStore<T>& store, const std::string& prefix, Var<T> tokens,
                    int hp, int wp, int P, int D, const EncodedPatches<T>& guidance) {
  const Tensor<T>& tv = tape.value(tokens);
  if (tv.rank() != 2 || tv.shape[0] != hp * wp || tv.shape[1] != D)
    throw ShapeError("decode_depth: tokens " + shape_str(tv.shape) + " vs grid " +
                     std::to_string(hp) + "x" + std::to_string(wp));
  const std::vector<int> factors = decoder_factor_plan(P);
  Var<T> x = reshape(tokens, {hp, wp, D});
  int div = P;
  for (std::size_t j = 0; j < factors.size(); ++j) {
    const int f = factors[j];
    int gi = -1;
    for (std::size_t i = 0; i < guidance.stage_divisors.size(); ++i)
      if (guidance.stage_divisors[i] == div) gi = static_cast<int>(i);
    if (gi < 0)
      throw ShapeError("decode_depth: missing guidance stage at divisor " + std::to_string(div));
    const std::string up = prefix + ".up" + std::to_string(j);
    Var<T> m = concat<T>({x, guidance.stage_maps[gi]}, 2);
    m = gelu(apply_conv(tape, store, up + ".mask0", m, 1, 1));
    m = apply_conv(tape, store, up + ".mask1", m, 1, 0);
    x = convex_upsample(x, m, f);
    div /= f;
    if (j + 1 < factors.size()) x = gelu(apply_conv(tape, store, up + ".reduce", x, 1, 0));
  }
  return sigmoid(apply_conv(tape, store, prefix + ".out", x, 1, 0));
}

} // namespace delta
