#pragma once

#include <optional>
#include <string>
#include <vector>

#include "delta/attention.hpp"
#include "delta/graph.hpp"
#include "delta/memory.hpp"
#include "delta/patch.hpp"

namespace delta {

// FULL is the complete network; the others are the ablation variants:
// NPM drops the propagation memory, NCM the central memory, NCA the fusion
// cross-attention (two per-branch GRUs instead), NL the LiDAR branch, NE the
// event branch, and NEH swaps the convolutional heads for linear patchify
// plus a third self-attention layer per branch.
enum class Variant { FULL, NPM, NCM, NCA, NL, NE, NEH };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::FULL: return "FULL";
    case Variant::NPM: return "NPM";
    case Variant::NCM: return "NCM";
    case Variant::NCA: return "NCA";
    case Variant::NL: return "NL";
    case Variant::NE: return "NE";
    case Variant::NEH: return "NEH";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::FULL, Variant::NPM, Variant::NCM, Variant::NCA, Variant::NL,
                    Variant::NE, Variant::NEH})
    if (s == variant_name(v)) return v;
  throw UsageError("unknown variant: " + s);
}

constexpr int kEventBins = 4;
constexpr int kNehPatchChannels = 2; // channels after re-grouping NEH tokens to a raster

struct NetworkConfig {
  int height = 64;
  int width = 64;
  int patch = 16;
  int dim = 64;
  int heads = 4;
  int ffn_mult = 2;
  int prop_rows = 32;
  std::int64_t dt_us = 50000;
  double max_range = 50.0;
  Variant variant = Variant::FULL;

  int hp() const { return height / patch; }
  int wp() const { return width / patch; }
  int tokens() const { return hp() * wp(); }

  bool use_events() const { return variant != Variant::NE; }
  bool use_lidar() const { return variant != Variant::NL; }
  bool use_prop() const {
    return variant == Variant::FULL || variant == Variant::NCM || variant == Variant::NCA ||
           variant == Variant::NEH;
  }
  bool use_caf() const {
    return variant == Variant::FULL || variant == Variant::NPM || variant == Variant::NCM ||
           variant == Variant::NEH;
  }
  bool use_central() const { return variant != Variant::NCM; }
  int sa_layers() const { return variant == Variant::NEH ? 3 : 2; }

  AttentionSpec attn() const { return {dim, heads, ffn_mult}; }

  void validate() const {
    if (height < 1 || width < 1) throw UsageError("raster size must be positive");
    if (height % patch != 0 || width % patch != 0)
      throw UsageError("raster " + std::to_string(height) + "x" + std::to_string(width) +
                       " is not a multiple of patch " + std::to_string(patch) + "; pad first");
    if (dim % 4 != 0) throw UsageError("D must be divisible by 4");
    if (dim % heads != 0) throw UsageError("heads must divide D");
    if (prop_rows < 1) throw UsageError("propagation memory needs at least one row");
    if (max_range <= 0) throw UsageError("max_range must be positive");
    if (dt_us <= 0) throw UsageError("dt must be positive");
    encoder_stage_plan(patch, dim); // throws when the patch size has no stage factorization
  }
};

template <typename T>
struct WindowInput {
  Tensor<T> event_volume;          // (H, W, 4)
  std::optional<Tensor<T>> lidar;  // (H, W, 1), present only when a frame arrived
  std::optional<Tensor<T>> gt;     // (H, W, 1), training/eval only
};

// Recurrent state between windows (plain tensors, detached from any tape).
template <typename T>
struct NetworkState {
  Tensor<T> prop;    // (prop_rows, D)
  Tensor<T> central; // (N, D)
  Tensor<T> lidar;   // (N, D) current LiDAR token state
  Tensor<T> lidar_raster; // last seen sparse depth image, (H, W, 1)
  bool has_prop = false, has_central = false, has_lidar = false, has_lidar_raster = false;
  bool initialized = false;
  long step = 0;
};

// Same state lifted onto a tape, so gradients can flow through an unrolled chunk.
// The raw raster is input data, not part of the differentiable state.
template <typename T>
struct StateVars {
  Var<T> prop, central, lidar;
  Tensor<T> lidar_raster;
  bool has_prop = false, has_central = false, has_lidar = false, has_lidar_raster = false;
  long step = 0;
};

template <typename T>
void build_variant(const NetworkConfig& cfg, ParamStore<T>& store, Rng& rng) {
  cfg.validate();
  const AttentionSpec spec = cfg.attn();
  const int D = cfg.dim;
  const int P = cfg.patch;

  if (cfg.use_events()) {
    if (cfg.variant == Variant::NEH)
      create_linear(store, "enc_event.patch", P * P * kEventBins, D, rng);
    else
      create_encoder_head(store, "enc_event", kEventBins, P, D, rng);
  }
  if (cfg.use_lidar()) {
    if (cfg.variant == Variant::NEH)
      create_linear(store, "enc_lidar.patch", P * P * 1, D, rng);
    else
      create_encoder_head(store, "enc_lidar", 1, P, D, rng);
  }
  if (cfg.use_prop()) {
    store.create("prop_init", xavier_uniform<T>({cfg.prop_rows, D}, D, D, rng));
    create_attention_block(store, "ca_p1", spec, /*cross=*/true, rng);
    create_attention_block(store, "ca_p2", spec, /*cross=*/true, rng);
  }
  for (int k = 1; k <= cfg.sa_layers(); ++k) {
    if (cfg.use_events())
      create_attention_block(store, "sa_e" + std::to_string(k), spec, false, rng);
    if (cfg.use_lidar())
      create_attention_block(store, "sa_l" + std::to_string(k), spec, false, rng);
  }
  if (cfg.use_caf()) create_attention_block(store, "ca_f", spec, /*cross=*/true, rng);
  if (cfg.variant == Variant::NCA) {
    create_gru(store, "gru_l", D, rng);
    create_gru(store, "gru_e", D, rng);
  } else if (cfg.use_central()) {
    create_gru(store, "gru", D, rng);
  }
  for (int k = 1; k <= cfg.sa_layers(); ++k) {
    create_layer_norm(store, "dec.skip" + std::to_string(k), D);
    create_attention_block(store, "dec.sa" + std::to_string(k), spec, false, rng);
  }
  if (cfg.variant == Variant::NEH) {
    create_linear(store, "dec.regroup", D, P * P * kNehPatchChannels, rng);
    create_conv(store, "dec.smooth0", 3, 3, kNehPatchChannels, 8, rng);
    create_conv(store, "dec.smooth1", 3, 3, 8, 1, rng, /*zero_init=*/true);
  } else {
    create_decoder_head(store, "dec", P, D, rng);
  }
}

inline std::size_t count_parameters(const ParamStore<float>& store) { return store.total_scalars(); }
inline std::size_t count_parameters(const ParamStore<double>& store) { return store.total_scalars(); }

// Initial recurrent state: the central memory starts as a copy of the
// positional embedding, the propagation memory as its learned parameter. The
// LiDAR token state is filled on the first window (from the frame if one
// arrived, else from an all-zero sparse depth image).
template <typename T>
NetworkState<T> init_state(const NetworkConfig& cfg, const ParamStore<T>& store) {
  cfg.validate();
  NetworkState<T> st;
  if (cfg.use_central()) {
    st.central = make_positional_embedding<T>(cfg.hp(), cfg.wp(), cfg.dim);
    st.has_central = true;
  }
  if (cfg.use_prop()) {
    st.prop = store.at("prop_init").value;
    st.has_prop = true;
  }
  st.initialized = true;
  return st;
}

// Sequence-start state on a tape. The propagation memory enters as its
// parameter node so the learned initial state receives gradients; the central
// memory is a fixed copy of the positional embedding.
template <typename T>
StateVars<T> lift_initial_state(Tape<T>& tape, const NetworkConfig& cfg, ParamStore<T>& store) {
  cfg.validate();
  StateVars<T> v;
  if (cfg.use_central()) {
    v.central = tape.constant(make_positional_embedding<T>(cfg.hp(), cfg.wp(), cfg.dim));
    v.has_central = true;
  }
  if (cfg.use_prop()) {
    v.prop = tape.param(store, "prop_init");
    v.has_prop = true;
  }
  return v;
}

template <typename T>
StateVars<T> lift_state(Tape<T>& tape, const NetworkState<T>& st) {
  if (!st.initialized) throw UsageError("network state not initialized; call init_state first");
  StateVars<T> v;
  v.has_prop = st.has_prop;
  v.has_central = st.has_central;
  v.has_lidar = st.has_lidar;
  v.has_lidar_raster = st.has_lidar_raster;
  v.lidar_raster = st.lidar_raster;
  v.step = st.step;
  if (st.has_prop) v.prop = tape.constant(st.prop);
  if (st.has_central) v.central = tape.constant(st.central);
  if (st.has_lidar) v.lidar = tape.constant(st.lidar);
  return v;
}

template <typename T>
NetworkState<T> freeze_state(Tape<T>& tape, const StateVars<T>& v) {
  NetworkState<T> st;
  st.has_prop = v.has_prop;
  st.has_central = v.has_central;
  st.has_lidar = v.has_lidar;
  st.has_lidar_raster = v.has_lidar_raster;
  st.lidar_raster = v.lidar_raster;
  st.initialized = true;
  st.step = v.step;
  if (v.has_prop) st.prop = tape.value(v.prop);
  if (v.has_central) st.central = tape.value(v.central);
  if (v.has_lidar) st.lidar = tape.value(v.lidar);
  return st;
}

template <typename T>
struct StepResult {
  Var<T> depth; // (H, W, 1) in [0,1]
  StateVars<T> next;
};

namespace detail {

template <typename T>
struct Branch {
  std::vector<Var<T>> sa;          // SA outputs, sa[k-1] = layer k
  Var<T> tokens0;                  // encoder output + positional embedding
  EncodedPatches<T> enc;           // conv-head stage maps (empty for NEH)
  bool has_enc = false;
};

template <typename T>
Branch<T> encode_branch(Tape<T>& tape, ParamStore<T>& store, const NetworkConfig& cfg,
                        const std::string& prefix, Var<T> raster, int channels, Var<T> pos) {
  Branch<T> br;
  if (cfg.variant == Variant::NEH) {
    Var<T> flat = patchify(raster, cfg.patch);
    br.tokens0 = add(apply_linear(tape, store, prefix + ".patch", flat), pos);
  } else {
    br.enc = encode_patches(tape, store, prefix, raster, cfg.patch, cfg.dim);
    br.has_enc = true;
    br.tokens0 = add(br.enc.tokens, pos);
  }
  (void)channels;
  return br;
}

} // namespace detail

// One temporal window through the variant's graph. `state` must come from
// lift_state (or a previous step on the same tape, which keeps gradients
// flowing through the recurrence).
template <typename T>
StepResult<T> forward_step(Tape<T>& tape, const NetworkConfig& cfg, ParamStore<T>& store,
                           const StateVars<T>& state, const WindowInput<T>& input) {
  const AttentionSpec spec = cfg.attn();
  const int D = cfg.dim;
  const auto& ev = input.event_volume;
  if (cfg.use_events() &&
      (ev.rank() != 3 || ev.shape[0] != cfg.height || ev.shape[1] != cfg.width || ev.shape[2] != kEventBins))
    throw ShapeError("forward_step: event volume " + shape_str(ev.shape) + ", expected (" +
                     std::to_string(cfg.height) + "," + std::to_string(cfg.width) + "," +
                     std::to_string(kEventBins) + ")");
  if (input.lidar &&
      (input.lidar->shape[0] != cfg.height || input.lidar->shape[1] != cfg.width || input.lidar->shape[2] != 1))
    throw ShapeError("forward_step: lidar raster " + shape_str(input.lidar->shape));

  Var<T> pos = tape.constant(make_positional_embedding<T>(cfg.hp(), cfg.wp(), D));
  StepResult<T> out;
  out.next = state;
  out.next.step = state.step + 1;

  // Encoding branches.
  detail::Branch<T> eb, lb;
  if (cfg.use_events())
    eb = detail::encode_branch(tape, store, cfg, "enc_event", tape.constant(ev), kEventBins, pos);

  Var<T> lidar_state; // token state entering this window
  if (cfg.use_lidar()) {
    // The NE decoder is guided by the LiDAR head, so that variant re-encodes
    // the most recent raster every window instead of persisting tokens.
    const bool needs_head_every_window = !cfg.use_events() && cfg.variant != Variant::NEH;
    if (input.lidar) {
      lb = detail::encode_branch(tape, store, cfg, "enc_lidar", tape.constant(*input.lidar), 1, pos);
      lidar_state = lb.tokens0;
      out.next.lidar_raster = *input.lidar;
      out.next.has_lidar_raster = true;
    } else if (needs_head_every_window && state.has_lidar_raster) {
      lb = detail::encode_branch(tape, store, cfg, "enc_lidar", tape.constant(state.lidar_raster), 1, pos);
      lidar_state = lb.tokens0;
    } else if (state.has_lidar && !needs_head_every_window) {
      lidar_state = state.lidar;
    } else {
      // first window without a frame: run an all-zero sparse depth image through the head
      lb = detail::encode_branch(tape, store, cfg, "enc_lidar",
                                 tape.constant(Tensor<T>({cfg.height, cfg.width, 1})), 1, pos);
      lidar_state = lb.tokens0;
    }
  }

  // LiDAR propagation (CA_P1 / CA_P2), or plain persistence without it.
  Var<T> lp = lidar_state;
  if (cfg.use_lidar()) {
    if (cfg.use_prop()) {
      auto prop = propagate_lidar(tape, store, spec, state.prop, eb.tokens0, lidar_state);
      out.next.prop = prop.memory;
      lp = prop.tokens;
    }
    out.next.lidar = lp;
    out.next.has_lidar = true;
  }

  // Self-attention stacks.
  std::vector<Var<T>> e_sa, l_sa;
  for (int k = 1; k <= cfg.sa_layers(); ++k) {
    if (cfg.use_events()) {
      Var<T> in = k == 1 ? eb.tokens0 : e_sa.back();
      e_sa.push_back(self_attend(tape, store, "sa_e" + std::to_string(k), spec, in));
    }
    if (cfg.use_lidar()) {
      Var<T> in = k == 1 ? lp : l_sa.back();
      l_sa.push_back(self_attend(tape, store, "sa_l" + std::to_string(k), spec, in));
    }
  }

  // Fusion and central memory update.
  Var<T> decoder_in;
  if (cfg.variant == Variant::NCA) {
    Var<T> mem = gru_update(tape, store, "gru_l", l_sa.back(), state.central);
    mem = gru_update(tape, store, "gru_e", e_sa.back(), mem);
    out.next.central = mem;
    decoder_in = mem;
  } else {
    Var<T> fused;
    if (cfg.use_caf())
      fused = cross_attend(tape, store, "ca_f", spec, e_sa.back(), l_sa.back());
    else
      fused = cfg.use_events() ? e_sa.back() : l_sa.back();
    if (cfg.use_central()) {
      Var<T> mem = gru_update(tape, store, "gru", fused, state.central);
      out.next.central = mem;
      decoder_in = mem;
    } else {
      decoder_in = fused; // NCM: the fused representation feeds the decoder directly
    }
  }

  // Decoder: SA modules with skip connections from the encoding branches,
  // deepest layer first.
  Var<T> d = decoder_in;
  for (int k = cfg.sa_layers(); k >= 1; --k) {
    Var<T> skip;
    if (cfg.use_events() && cfg.use_lidar())
      skip = add(e_sa[k - 1], l_sa[k - 1]);
    else
      skip = cfg.use_events() ? e_sa[k - 1] : l_sa[k - 1];
    skip = apply_layer_norm(tape, store, "dec.skip" + std::to_string(k), skip);
    d = add(self_attend(tape, store, "dec.sa" + std::to_string(k), spec, d), skip);
  }

  if (cfg.variant == Variant::NEH) {
    Var<T> grouped = unpatchify(apply_linear(tape, store, "dec.regroup", d), cfg.hp(), cfg.wp(),
                                cfg.patch, kNehPatchChannels);
    Var<T> s = gelu(apply_conv(tape, store, "dec.smooth0", grouped, 1, 1));
    out.depth = sigmoid(apply_conv(tape, store, "dec.smooth1", s, 1, 1));
  } else {
    const detail::Branch<T>& guide = cfg.use_events() ? eb : lb;
    if (!guide.has_enc) throw ShapeError("forward_step: no encoding head available for guidance");
    out.depth = decode_depth(tape, store, "dec", d, cfg.hp(), cfg.wp(), cfg.patch, D, guide.enc);
  }
  return out;
}

// Threads the recurrent state across windows, one depth map per window.
// Inference-style: each window runs on its own tape with the state detached
// in between, which matches a manual fold of forward_step bit-exactly.
template <typename T>
std::vector<Tensor<T>> forward_sequence(const NetworkConfig& cfg, ParamStore<T>& store,
                                        const std::vector<WindowInput<T>>& inputs) {
  if (inputs.empty()) throw UsageError("forward_sequence needs at least one window");
  std::vector<Tensor<T>> depths;
  depths.reserve(inputs.size());
  NetworkState<T> state;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tape<T> tape;
    auto lifted = t == 0 ? lift_initial_state(tape, cfg, store) : lift_state(tape, state);
    auto step = forward_step(tape, cfg, store, lifted, inputs[t]);
    depths.push_back(tape.value(step.depth));
    state = freeze_state(tape, step.next);
  }
  return depths;
}

} // namespace delta
