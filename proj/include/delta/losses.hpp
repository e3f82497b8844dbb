#pragma once

#include <string>
#include <vector>

#include "delta/graph.hpp"

namespace delta {

// Supervision mask: pixels with ground truth (> 0).
template <typename T>
Tensor<T> valid_mask(const Tensor<T>& gt) {
  Tensor<T> m(gt.shape);
  for (std::size_t i = 0; i < gt.numel(); ++i) m.data[i] = gt.data[i] > T(0) ? T(1) : T(0);
  return m;
}

template <typename T>
std::size_t mask_count(const Tensor<T>& mask) {
  std::size_t n = 0;
  for (T v : mask.data) n += v > T(0);
  return n;
}

// Mean |pred - gt| over valid pixels, in normalized depth units.
template <typename T>
Var<T> l1_loss(Tape<T>& tape, Var<T> pred, const Tensor<T>& gt, const Tensor<T>& mask) {
  if (tape.value(pred).shape != gt.shape || gt.shape != mask.shape)
    throw ShapeError("l1_loss: shapes disagree: pred " + shape_str(tape.value(pred).shape) +
                     " gt " + shape_str(gt.shape) + " mask " + shape_str(mask.shape));
  const std::size_t count = mask_count(mask);
  if (count == 0) throw DataError("l1_loss: empty validity mask");
  Var<T> diff = abs_op(sub(pred, tape.constant(gt)));
  Var<T> masked = mul(diff, tape.constant(mask));
  return mul_scalar(sum_all(masked), T(1) / T(count));
}

namespace detail {

// Pooled validity: a pooled pixel is valid iff any contributing pixel is valid.
template <typename T>
Tensor<T> pool_mask(const Tensor<T>& mask) {
  const int H = mask.shape[0], W = mask.shape[1];
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  Tensor<T> out({OH, OW, 1});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      if (mask.at(i, j, 0) > T(0)) out.at(i / 2, j / 2, 0) = T(1);
  return out;
}

} // namespace detail

// Multiscale gradient-matching loss: at each of `scales` resolutions (mask-
// aware 2x average pooling between them), the mean over valid forward-
// difference sites of |dx(e)| + |dy(e)| with e = pred - gt. A site (i,j) is
// valid when (i,j), (i,j+1) and (i+1,j) all carry ground truth; the last
// row/column never hosts a site. Scales are summed unweighted. Constant
// offsets between pred and gt vanish.
template <typename T>
Var<T> msg_loss(Tape<T>& tape, Var<T> pred, const Tensor<T>& gt_in, const Tensor<T>& mask_in,
                int scales = 5) {
  const Tensor<T>& pv = tape.value(pred);
  if (pv.shape != gt_in.shape || gt_in.shape != mask_in.shape)
    throw ShapeError("msg_loss: shapes disagree");
  const int need = 1 << (scales - 1);
  if (pv.shape[0] < need || pv.shape[1] < need)
    throw UsageError("msg_loss with " + std::to_string(scales) + " scales needs rasters of at least " +
                     std::to_string(need) + " in each dim, got " + shape_str(pv.shape));

  Var<T> p = pred;
  Var<T> g = tape.constant(gt_in);
  Tensor<T> mask = mask_in;
  Var<T> total = tape.constant(Tensor<T>({1}));
  for (int s = 0; s < scales; ++s) {
    if (s > 0) {
      p = avgpool2(p, &mask);
      g = avgpool2(g, &mask);
      mask = detail::pool_mask(mask);
    }
    const int H = tape.value(p).shape[0], W = tape.value(p).shape[1];
    if (H < 2 || W < 2) continue;
    // site validity over the (H-1, W-1) grid
    Tensor<T> sites({H - 1, W - 1, 1});
    std::size_t site_count = 0;
    for (int i = 0; i < H - 1; ++i)
      for (int j = 0; j < W - 1; ++j) {
        const bool ok = mask.at(i, j, 0) > T(0) && mask.at(i, j + 1, 0) > T(0) &&
                        mask.at(i + 1, j, 0) > T(0);
        sites.at(i, j, 0) = ok ? T(1) : T(0);
        site_count += ok;
      }
    if (site_count == 0) continue;
    Var<T> e = sub(p, g);
    Var<T> ex = sub(slice(e, 1, 1, W - 1), slice(e, 1, 0, W - 1)); // (H, W-1, 1)
    Var<T> ey = sub(slice(e, 0, 1, H - 1), slice(e, 0, 0, H - 1)); // (H-1, W, 1)
    Var<T> q = add(abs_op(slice(ex, 0, 0, H - 1)), abs_op(slice(ey, 1, 0, W - 1)));
    Var<T> masked = mul(q, tape.constant(sites));
    total = add(total, mul_scalar(sum_all(masked), T(1) / T(site_count)));
  }
  return total;
}

template <typename T>
struct LossReport {
  std::vector<double> l1_steps;
  std::vector<double> msg_steps;
  double total_value = 0;
  Var<T> total; // sum over the sequence of l1_t + msg_t
};

// Eq.-style sequence loss: sum over steps of the two components.
template <typename T>
LossReport<T> sequence_loss(Tape<T>& tape, const std::vector<Var<T>>& preds,
                            const std::vector<Tensor<T>>& gts, const std::vector<Tensor<T>>& masks,
                            int scales = 5) {
  if (preds.size() != gts.size() || gts.size() != masks.size())
    throw UsageError("sequence_loss: got " + std::to_string(preds.size()) + " predictions, " +
                     std::to_string(gts.size()) + " ground truths, " + std::to_string(masks.size()) +
                     " masks");
  if (preds.empty()) throw UsageError("sequence_loss: empty sequence");
  LossReport<T> report;
  Var<T> total = tape.constant(Tensor<T>({1}));
  for (std::size_t t = 0; t < preds.size(); ++t) {
    Var<T> l1 = l1_loss(tape, preds[t], gts[t], masks[t]);
    Var<T> msg = msg_loss(tape, preds[t], gts[t], masks[t], scales);
    report.l1_steps.push_back(double(tape.value(l1).data[0]));
    report.msg_steps.push_back(double(tape.value(msg).data[0]));
    total = add(total, add(l1, msg));
  }
  report.total = total;
  report.total_value = double(tape.value(total).data[0]);
  return report;
}

} // namespace delta
