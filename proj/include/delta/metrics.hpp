#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "delta/error.hpp"
#include "delta/tensor.hpp"

namespace delta {

// Standard depth-estimation metrics per cutoff distance. Inputs are in meters;
// gt == 0 marks pixels without ground truth. A cutoff bucket holds pixels with
// 0 < gt <= cutoff. RMSlog additionally requires pred > 0.
struct CutoffStats {
  double cutoff = 0;
  std::size_t count = 0;     // valid pixels in the bucket
  std::size_t log_count = 0; // subset with pred > 0 (RMSlog)
  bool has_metrics = false;  // false when count == 0: metrics absent, not zero
  double mean = 0, absrel = 0, rms = 0, rmslog = 0, d1 = 0, d2 = 0, d3 = 0;
};

struct MetricReport {
  std::vector<CutoffStats> cutoffs;
};

// Cutoff ladder: the fixed nearby buckets {10, 20, 30} where they fall at or
// below half the range, plus half-max and max; sorted, duplicates merged.
// max_range 200 -> {10,20,30,100,200}; max_range 50 -> {10,20,25,50}.
inline std::vector<double> derive_cutoffs(double max_range) {
  if (max_range <= 0) throw UsageError("max_range must be positive");
  std::vector<double> cs;
  for (double c : {10.0, 20.0, 30.0})
    if (c <= max_range / 2) cs.push_back(c);
  cs.push_back(max_range / 2);
  cs.push_back(max_range);
  std::sort(cs.begin(), cs.end());
  cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
  return cs;
}

class MetricAccumulator {
public:
  explicit MetricAccumulator(std::vector<double> cutoffs) : cutoffs_(std::move(cutoffs)) {
    if (cutoffs_.empty()) throw UsageError("metrics need at least one cutoff");
    sums_.resize(cutoffs_.size());
  }

  template <typename T>
  void add(const Tensor<T>& pred_m, const Tensor<T>& gt_m) {
    if (pred_m.shape != gt_m.shape)
      throw ShapeError("metrics: pred " + shape_str(pred_m.shape) + " vs gt " + shape_str(gt_m.shape));
    for (std::size_t i = 0; i < gt_m.numel(); ++i) {
      const double gt = double(gt_m.data[i]);
      if (gt <= 0) continue;
      const double pred = double(pred_m.data[i]);
      const double err = std::abs(pred - gt);
      for (std::size_t c = 0; c < cutoffs_.size(); ++c) {
        if (gt > cutoffs_[c]) continue;
        Sums& s = sums_[c];
        s.n += 1;
        s.abs += err;
        s.rel += err / gt;
        s.sq += err * err;
        if (pred > 0) {
          const double dl = std::log(pred) - std::log(gt);
          s.logsq += dl * dl;
          s.n_log += 1;
          const double ratio = std::max(pred / gt, gt / pred);
          s.d1 += ratio < 1.25;
          s.d2 += ratio < 1.25 * 1.25;
          s.d3 += ratio < 1.25 * 1.25 * 1.25;
        }
      }
    }
  }

  MetricReport finalize() const {
    MetricReport report;
    for (std::size_t c = 0; c < cutoffs_.size(); ++c) {
      const Sums& s = sums_[c];
      CutoffStats st;
      st.cutoff = cutoffs_[c];
      st.count = s.n;
      st.log_count = s.n_log;
      if (s.n > 0) {
        st.has_metrics = true;
        st.mean = s.abs / s.n;
        st.absrel = s.rel / s.n;
        st.rms = std::sqrt(s.sq / s.n);
        st.rmslog = s.n_log > 0 ? std::sqrt(s.logsq / s.n_log) : 0;
        st.d1 = double(s.d1) / s.n;
        st.d2 = double(s.d2) / s.n;
        st.d3 = double(s.d3) / s.n;
      }
      report.cutoffs.push_back(st);
    }
    return report;
  }

private:
  struct Sums {
    std::size_t n = 0, n_log = 0, d1 = 0, d2 = 0, d3 = 0;
    double abs = 0, rel = 0, sq = 0, logsq = 0;
  };
  std::vector<double> cutoffs_;
  std::vector<Sums> sums_;
};

template <typename T>
MetricReport compute_metrics(const Tensor<T>& pred_m, const Tensor<T>& gt_m,
                             const std::vector<double>& cutoffs) {
  MetricAccumulator acc(cutoffs);
  acc.add(pred_m, gt_m);
  return acc.finalize();
}

// CSV: one row per cutoff, 6 significant digits, absent metrics written as nan.
inline std::string metrics_csv(const MetricReport& report) {
  std::string out = "cutoff_m,mean,absrel,rms,rmslog,d1,d2,d3,count\n";
  char buf[64];
  auto fmt = [&](double v, bool present) {
    if (!present) return std::string("nan");
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  for (const auto& c : report.cutoffs) {
    out += fmt(c.cutoff, true);
    for (double v : {c.mean, c.absrel, c.rms, c.rmslog, c.d1, c.d2, c.d3})
      out += "," + fmt(v, c.has_metrics);
    out += "," + std::to_string(c.count) + "\n";
  }
  return out;
}

} // namespace delta
