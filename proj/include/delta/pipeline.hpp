#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "delta/adam.hpp"
#include "delta/checkpoint.hpp"
#include "delta/config.hpp"
#include "delta/losses.hpp"
#include "delta/metrics.hpp"
#include "delta/network.hpp"
#include "delta/synthetic.hpp"

// End-to-end runs shared by the CLI and the test suites: dataset generation,
// truncated-BPTT training, held-out evaluation against the interpolation
// baseline, and per-window inference outputs.

namespace delta {

inline void gen_dataset(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string out = cfg.get_str("out");
  if (out.empty()) throw UsageError("gen-data needs --out");
  if (fs::exists(out)) {
    if (!cfg.get_bool("force")) throw UsageError("output directory exists: " + out + " (use --force)");
    fs::remove_all(out);
  }
  fs::create_directories(out);
  SceneConfig sc = cfg.scene();
  const int sequences = int(cfg.get_int("sequences"));
  if (sequences < 1) throw UsageError("need at least one sequence");
  for (int i = 0; i < sequences; ++i) {
    SceneConfig seq_cfg = sc;
    seq_cfg.seed = sc.seed + 7919u * std::uint64_t(i);
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03d", i);
    write_sequence_dir(out + "/" + name, generate_sequence(seq_cfg));
  }
  wire::write_file(out + "/run_config.txt", cfg.echo());
}

struct TrainResult {
  double first_loss = 0;
  double final_loss = 0;
  double final_lr = 0;
  long steps = 0;
  std::string checkpoint_path;
};

namespace detail {

template <typename T>
WindowInput<T> crop_window(const WindowInput<T>& in, int row, int col, int size) {
  WindowInput<T> out;
  out.event_volume = crop_raster(in.event_volume, row, col, size, size);
  if (in.lidar) out.lidar = crop_raster(*in.lidar, row, col, size, size);
  if (in.gt) out.gt = crop_raster(*in.gt, row, col, size, size);
  return out;
}

} // namespace detail

// Lockstep truncated BPTT: `batch` lanes advance one bptt-chunk per optimizer
// step, gradients averaged in lane order. State carries across chunks inside a
// sequence (values only; gradients stop at chunk boundaries) and resets at
// sequence start each epoch. The lr decays per epoch, but not after the last,
// so an E-epoch schedule applies E-1 decays.
inline TrainResult train_run(const RunConfig& cfg, ParamStore<float>& store,
                             std::string* loss_log = nullptr) {
  namespace fs = std::filesystem;
  const std::string dataset = cfg.get_str("dataset");
  if (dataset.empty()) throw UsageError("train needs --dataset");
  NetworkConfig net = cfg.network();
  const int crop = int(cfg.get_int("crop"));
  if (crop > 0) {
    if (crop % net.patch != 0) throw UsageError("crop must be a multiple of the patch size");
    net.height = net.width = crop;
  }
  net.validate();

  std::vector<LoadedSequence> seqs;
  for (const auto& dir : list_sequence_dirs(dataset)) seqs.push_back(load_sequence_dir(dir));
  const int T = seqs[0].windows;
  for (const auto& s : seqs) {
    if (s.windows != T) throw DataError("sequences disagree on window count");
    const int want_h = crop > 0 ? crop : net.height;
    if ((crop > 0 && (s.height < crop || s.width < crop)) ||
        (crop == 0 && (s.height != net.height || s.width != net.width)))
      throw DataError("dataset rasters are " + std::to_string(s.height) + "x" +
                      std::to_string(s.width) + ", config wants " + std::to_string(want_h));
    if (std::abs(s.max_range - net.max_range) > 1e-9)
      throw DataError("dataset max_range disagrees with config");
  }

  Rng rng(std::uint64_t(cfg.get_int("seed")));
  if (store.size() == 0) build_variant(net, store, rng);
  Rng crop_rng = rng.fork(1);

  AdamState<float> adam;
  adam.lr = float(cfg.get_double("lr"));
  const float decay = float(cfg.get_double("decay"));
  const int epochs = int(cfg.get_int("epochs"));
  const long max_steps = cfg.get_int("steps");
  const int batch = std::max(1, int(cfg.get_int("batch")));
  const int bptt = std::max(1, int(cfg.get_int("bptt")));
  const int chunks = (T + bptt - 1) / bptt;

  const std::string out = cfg.get_str("out");
  const bool writing = !out.empty();
  std::string ckpt_path;
  if (writing) {
    fs::create_directories(out);
    ckpt_path = out + "/checkpoint.dltw";
  }

  std::string log = "step,l1,msg,total\n";
  TrainResult result;
  long step = 0;
  bool done = false;
  char buf[160];

  std::vector<NetworkState<float>> lane_state(batch);
  std::vector<std::pair<int, int>> lane_crop(batch, {0, 0});

  for (int epoch = 1; epoch <= epochs && !done; ++epoch) {
    for (int ci = 0; ci < chunks && !done; ++ci) {
      store.zero_grads();
      double sum_l1 = 0, sum_msg = 0, sum_total = 0;
      for (int lane = 0; lane < batch; ++lane) {
        const LoadedSequence& seq = seqs[lane % seqs.size()];
        if (ci == 0 && crop > 0) {
          // one crop origin per lane per epoch, snapped to the patch grid,
          // constant across the sequence so token positions stay aligned
          int row = int(crop_rng.uniform_int(std::uint64_t(seq.height - crop) + 1));
          int col = int(crop_rng.uniform_int(std::uint64_t(seq.width - crop) + 1));
          lane_crop[lane] = {row - row % net.patch, col - col % net.patch};
        }
        Tape<float> tape;
        StateVars<float> state = ci == 0 ? lift_initial_state(tape, net, store)
                                         : lift_state(tape, lane_state[lane]);
        std::vector<Var<float>> preds;
        std::vector<Tensor<float>> gts, masks;
        const int t_end = std::min(T, (ci + 1) * bptt);
        for (int t = ci * bptt; t < t_end; ++t) {
          WindowInput<float> in =
              crop > 0 ? detail::crop_window(seq.inputs[t], lane_crop[lane].first,
                                             lane_crop[lane].second, crop)
                       : seq.inputs[t];
          auto res = forward_step(tape, net, store, state, in);
          state = res.next;
          preds.push_back(res.depth);
          gts.push_back(*in.gt);
          masks.push_back(valid_mask(*in.gt));
        }
        auto report = sequence_loss(tape, preds, gts, masks);
        if (!std::isfinite(report.total_value))
          throw NumericError("NaN loss at step " + std::to_string(step + 1) + " (lane " +
                             std::to_string(lane) + ")");
        tape.backward(report.total);
        lane_state[lane] = freeze_state(tape, state);
        for (double v : report.l1_steps) sum_l1 += v;
        for (double v : report.msg_steps) sum_msg += v;
        sum_total += report.total_value;
      }
      store.scale_grads(1.0f / float(batch));
      adam_step(adam, store);
      ++step;
      const double mean_total = sum_total / batch;
      if (step == 1) result.first_loss = mean_total;
      result.final_loss = mean_total;
      std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g\n", step, sum_l1 / batch, sum_msg / batch,
                    mean_total);
      log += buf;
      if (max_steps > 0 && step >= max_steps) done = true;
    }
    if (writing) save_checkpoint(ckpt_path, store, variant_name(net.variant));
    if (epoch < epochs && !done) decay_lr(adam, decay);
  }

  result.final_lr = adam.lr;
  result.steps = step;
  result.checkpoint_path = ckpt_path;
  if (writing) {
    wire::write_file(out + "/loss_log.csv", log);
    wire::write_file(out + "/run_config.txt", cfg.echo());
  }
  if (loss_log) *loss_log = log;
  return result;
}

inline ParamStore<float> load_network(const RunConfig& cfg, NetworkConfig& net) {
  const std::string path = cfg.get_str("checkpoint");
  if (path.empty()) throw UsageError("missing --checkpoint");
  auto ckpt = load_checkpoint(path);
  net = cfg.network();
  if (ckpt.variant_tag != variant_name(net.variant))
    throw DataError("checkpoint variant " + ckpt.variant_tag + " does not match config variant " +
                    variant_name(net.variant));
  ParamStore<float> store;
  Rng rng(0);
  build_variant(net, store, rng);
  assign_checkpoint(store, ckpt);
  return store;
}

struct EvalResult {
  MetricReport model;
  MetricReport baseline;
  std::size_t windows_scored = 0;
};

inline EvalResult evaluate(const NetworkConfig& net, ParamStore<float>& store,
                           const std::string& dataset, int warmup) {
  const auto cutoffs = derive_cutoffs(net.max_range);
  MetricAccumulator model_acc(cutoffs), base_acc(cutoffs);
  EvalResult result;
  for (const auto& dir : list_sequence_dirs(dataset)) {
    auto seq = load_sequence_dir(dir);
    if (seq.height != net.height || seq.width != net.width)
      throw DataError("sequence " + dir + " is " + std::to_string(seq.height) + "x" +
                      std::to_string(seq.width) + ", config wants " + std::to_string(net.height) +
                      "x" + std::to_string(net.width));
    auto depths = forward_sequence(net, store, seq.inputs);
    for (std::size_t t = warmup; t < depths.size(); ++t) {
      if (!seq.inputs[t].gt) continue;
      Tensor<float> pred_m = depths[t];
      for (auto& v : pred_m.data) v = float(v * net.max_range);
      Tensor<float> gt_m = *seq.inputs[t].gt;
      for (auto& v : gt_m.data) v = float(v * net.max_range);
      model_acc.add(pred_m, gt_m);
      Tensor<float> base = baseline_interpolate(seq.lidar_rasters[t]);
      for (auto& v : base.data) v = float(v * net.max_range);
      base_acc.add(base, gt_m);
      ++result.windows_scored;
    }
  }
  result.model = model_acc.finalize();
  result.baseline = base_acc.finalize();
  return result;
}

inline void infer_run(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const std::string seq_dir = cfg.get_str("sequence");
  const std::string out = cfg.get_str("out");
  if (seq_dir.empty()) throw UsageError("infer needs --sequence");
  if (out.empty()) throw UsageError("infer needs --out");
  NetworkConfig net;
  ParamStore<float> store = load_network(cfg, net);
  auto seq = load_sequence_dir(seq_dir);
  if (seq.height != net.height || seq.width != net.width)
    throw DataError("sequence resolution " + std::to_string(seq.height) + "x" +
                    std::to_string(seq.width) + " does not match the configured network");
  fs::create_directories(out);
  auto depths = forward_sequence(net, store, seq.inputs);
  for (std::size_t t = 0; t < depths.size(); ++t) {
    write_raster(out + "/pred_" + std::to_string(t) + ".df32", depths[t]);
    write_depth_pgm(out + "/pred_" + std::to_string(t) + ".pgm", depths[t]);
    if (seq.inputs[t].gt) {
      Tensor<float> err({net.height, net.width, 1});
      for (std::size_t i = 0; i < err.numel(); ++i)
        err.data[i] = std::abs(depths[t].data[i] - seq.inputs[t].gt->data[i]);
      write_depth_pgm(out + "/error_" + std::to_string(t) + ".pgm", err);
    }
  }
  wire::write_file(out + "/run_config.txt", cfg.echo());
}

} // namespace delta
