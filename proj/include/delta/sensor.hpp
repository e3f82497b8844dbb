#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "delta/error.hpp"
#include "delta/rng.hpp"
#include "delta/tensor.hpp"

namespace delta {

struct EventRecord {
  std::uint64_t t_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t polarity = 1; // +1 or -1
};

// Events of one temporal window. Timestamps live in [t_start_us, t_end_us)
// (half-open: an event exactly at t_end belongs to the next window) and are
// sorted non-decreasing.
struct EventWindow {
  std::uint64_t t_start_us = 0;
  std::uint64_t t_end_us = 0;
  std::vector<EventRecord> events;
};

// Accumulate a window into an (H, W, bins) volume. Each event's signed polarity
// is split between the two temporal bins around t* = (t-t0)/dt * (bins-1) with
// bilinear weights, which form a partition of unity, so the volume's total mass
// equals the sum of signed polarities.
template <typename T>
Tensor<T> build_event_volume(const EventWindow& win, int H, int W, int bins = 4) {
  if (bins < 2) throw UsageError("event volume needs bins >= 2");
  if (win.t_end_us <= win.t_start_us) throw DataError("event window has non-positive duration");
  Tensor<T> vol({H, W, bins});
  const double dt = static_cast<double>(win.t_end_us - win.t_start_us);
  for (std::size_t idx = 0; idx < win.events.size(); ++idx) {
    const EventRecord& e = win.events[idx];
    if (e.t_us < win.t_start_us || e.t_us >= win.t_end_us)
      throw DataError("event " + std::to_string(idx) + " at t=" + std::to_string(e.t_us) +
                      "us outside window [" + std::to_string(win.t_start_us) + "," +
                      std::to_string(win.t_end_us) + ")");
    if (e.x >= W || e.y >= H)
      throw DataError("event " + std::to_string(idx) + " at (" + std::to_string(e.x) + "," +
                      std::to_string(e.y) + ") outside " + std::to_string(W) + "x" +
                      std::to_string(H) + " sensor");
    if (e.polarity != 1 && e.polarity != -1)
      throw DataError("event " + std::to_string(idx) + " has polarity " +
                      std::to_string(int(e.polarity)));
    const double tstar = (static_cast<double>(e.t_us - win.t_start_us) / dt) * (bins - 1);
    int k = static_cast<int>(tstar);
    if (k > bins - 2) k = bins - 2;
    const double frac = tstar - k;
    const T pol = static_cast<T>(int(e.polarity));
    vol.at(e.y, e.x, k) += pol * static_cast<T>(1.0 - frac);
    vol.at(e.y, e.x, k + 1) += pol * static_cast<T>(frac);
  }
  return vol;
}

struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::array<double, 9> rot{1, 0, 0, 0, 1, 0, 0, 0, 1}; // row-major, LiDAR -> camera
  std::array<double, 3> trans{0, 0, 0};                 // meters

  void validate() const {
    if (fx <= 0 || fy <= 0) throw DataError("camera focal lengths must be positive");
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += rot[k * 3 + i] * rot[k * 3 + j];
        if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6)
          throw DataError("camera rotation is not orthonormal");
      }
  }
};

// Canonical pinhole used throughout the synthetic pipeline; derived from the
// raster size only, so dataset files do not need to carry intrinsics.
inline CameraModel canonical_camera(int H, int W) {
  CameraModel cam;
  cam.fx = cam.fy = static_cast<double>(W);
  cam.cx = (W - 1) / 2.0;
  cam.cy = (H - 1) / 2.0;
  return cam;
}

// Project a point cloud to a normalized sparse depth image (H, W, 1); 0 marks
// pixels without a measurement. When several points land on one pixel the
// smallest depth wins; exact depth ties keep the point that sorts first by
// (depth, x, y, z), which makes the result independent of input order.
template <typename T>
Tensor<T> project_lidar(const std::vector<std::array<float, 3>>& points, const CameraModel& cam,
                        int H, int W, double max_range) {
  if (max_range <= 0) throw UsageError("max_range must be positive");
  Tensor<T> img({H, W, 1});
  struct Best {
    double z = std::numeric_limits<double>::infinity();
    std::array<float, 3> p{0, 0, 0};
  };
  std::vector<Best> best(std::size_t(H) * W);
  auto wins = [](double z, const std::array<float, 3>& p, const Best& b) {
    if (z != b.z) return z < b.z;
    if (p[0] != b.p[0]) return p[0] < b.p[0];
    if (p[1] != b.p[1]) return p[1] < b.p[1];
    return p[2] < b.p[2];
  };
  for (const auto& p : points) {
    const double xc = cam.rot[0] * p[0] + cam.rot[1] * p[1] + cam.rot[2] * p[2] + cam.trans[0];
    const double yc = cam.rot[3] * p[0] + cam.rot[4] * p[1] + cam.rot[5] * p[2] + cam.trans[1];
    const double zc = cam.rot[6] * p[0] + cam.rot[7] * p[1] + cam.rot[8] * p[2] + cam.trans[2];
    if (zc <= 0 || zc > max_range) continue;
    const long u = std::lround(cam.fx * xc / zc + cam.cx);
    const long v = std::lround(cam.fy * yc / zc + cam.cy);
    if (u < 0 || u >= W || v < 0 || v >= H) continue;
    Best& b = best[std::size_t(v) * W + u];
    if (wins(zc, p, b)) b = Best{zc, p};
  }
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const Best& b = best[std::size_t(v) * W + u];
      if (std::isfinite(b.z)) img.at(v, u, 0) = static_cast<T>(b.z / max_range);
    }
  return img;
}

template <typename T>
struct CropResult {
  Tensor<T> event_volume;
  Tensor<T> lidar;
  Tensor<T> gt;
  int row = 0, col = 0;
};

namespace detail {
template <typename T>
Tensor<T> crop_raster(const Tensor<T>& r, int row, int col, int ch, int cw) {
  const int W = r.shape[1], C = r.shape[2];
  Tensor<T> out({ch, cw, C});
  for (int i = 0; i < ch; ++i)
    std::copy_n(&r.data[(std::size_t(row + i) * W + col) * C], std::size_t(cw) * C,
                &out.data[std::size_t(i) * cw * C]);
  return out;
}
} // namespace detail

// Shared random crop of the three training rasters. The origin is drawn
// uniformly and then snapped down to the patch grid so positional embeddings
// stay aligned across crops.
template <typename T>
CropResult<T> random_crop(const Tensor<T>& event_volume, const Tensor<T>& lidar,
                          const Tensor<T>& gt, int crop_h, int crop_w, int patch, Rng& rng) {
  const int H = event_volume.shape[0], W = event_volume.shape[1];
  if (lidar.shape[0] != H || lidar.shape[1] != W || gt.shape[0] != H || gt.shape[1] != W)
    throw ShapeError("random_crop: rasters disagree on (H,W)");
  if (crop_h > H || crop_w > W)
    throw UsageError("crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w) +
                     " exceeds raster " + std::to_string(H) + "x" + std::to_string(W));
  int row = static_cast<int>(rng.uniform_int(std::uint64_t(H - crop_h) + 1));
  int col = static_cast<int>(rng.uniform_int(std::uint64_t(W - crop_w) + 1));
  row -= row % patch;
  col -= col % patch;
  CropResult<T> out;
  out.row = row;
  out.col = col;
  out.event_volume = detail::crop_raster(event_volume, row, col, crop_h, crop_w);
  out.lidar = detail::crop_raster(lidar, row, col, crop_h, crop_w);
  out.gt = detail::crop_raster(gt, row, col, crop_h, crop_w);
  return out;
}

template <typename T>
struct PaddedRaster {
  Tensor<T> raster;
  int orig_h = 0, orig_w = 0;
};

// Zero-pad right/bottom up to the next multiple of P.
template <typename T>
PaddedRaster<T> pad_to_patch_multiple(const Tensor<T>& r, int P) {
  if (P < 1) throw UsageError("patch size must be >= 1");
  const int H = r.shape[0], W = r.shape[1], C = r.shape[2];
  const int PH = (H + P - 1) / P * P;
  const int PW = (W + P - 1) / P * P;
  PaddedRaster<T> out;
  out.orig_h = H;
  out.orig_w = W;
  if (PH == H && PW == W) {
    out.raster = r;
    return out;
  }
  out.raster = Tensor<T>({PH, PW, C});
  for (int i = 0; i < H; ++i)
    std::copy_n(&r.data[std::size_t(i) * W * C], std::size_t(W) * C,
                &out.raster.data[std::size_t(i) * PW * C]);
  return out;
}

template <typename T>
Tensor<T> unpad(const Tensor<T>& r, int orig_h, int orig_w) {
  if (r.shape[0] == orig_h && r.shape[1] == orig_w) return r;
  return detail::crop_raster(r, 0, 0, orig_h, orig_w);
}

} // namespace delta
