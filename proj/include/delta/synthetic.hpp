#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "delta/io.hpp"
#include "delta/network.hpp"
#include "delta/rng.hpp"
#include "delta/sensor.hpp"

// Desk-scale scene generator: textured fronto-parallel rectangles over a
// ground plane, viewed by a translating camera. Per-pixel log-intensity is
// tracked against a contrast threshold to synthesize events (timestamps
// interpolated between sub-frames); ground truth is the z-buffer at each
// window end; LiDAR frames subsample the ground truth on scan rows and are
// back-projected to 3-D points, delivered every k-th window.

namespace delta {

struct SceneConfig {
  std::uint64_t seed = 7;
  int height = 64;
  int width = 64;
  std::int64_t dt_us = 50000;
  int windows = 16;      // T
  int lidar_period = 1;  // k: frames arrive on steps t = 0 (mod k)
  int lidar_rows = 8;
  double max_range = 50.0;
  int objects = 4;
  double speed_min = 1.0, speed_max = 4.0; // camera speed range, m/s
  double contrast = 0.2;                   // event threshold, log-intensity units
  int subframes = 10;

  void validate() const {
    if (height < 1 || width < 1) throw UsageError("scene raster must be positive");
    if (windows < 1) throw UsageError("need at least one window");
    if (lidar_period < 1) throw UsageError("lidar period k must be >= 1");
    if (lidar_rows < 1 || lidar_rows > height) throw UsageError("bad lidar row count");
    if (max_range <= 0) throw UsageError("max_range must be positive");
    if (contrast <= 0) throw UsageError("contrast threshold must be positive");
    if (objects < 0) throw UsageError("object count must be >= 0");
    if (speed_min < 0 || speed_max < speed_min) throw UsageError("bad camera speed range");
    if (subframes < 1) throw UsageError("need at least one sub-frame");
    if (dt_us <= 0) throw UsageError("dt must be positive");
  }
};

struct SceneRect {
  double z = 10;                  // fronto-parallel plane depth (world frame)
  double x0 = -1, x1 = 1, y0 = -1, y1 = 0.5;
  double base = 0.5;              // surface intensity
  double texture = 0.15;          // sinusoid texture amplitude (0 = flat)
  double period = 1.0;            // texture period, meters
};

struct Scene {
  std::vector<SceneRect> rects;
  double ground_y = 1.5;   // plane below the camera (y points down)
  double ground_base = 0.55, ground_texture = 0.25, ground_period = 2.0;
  double sky_intensity = 0.85;
  std::array<double, 3> cam_vel{2.0, 0.0, 0.0}; // m/s, world frame
};

inline Scene sample_scene(const SceneConfig& cfg, Rng& rng) {
  Scene scene;
  scene.cam_vel[0] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(cfg.speed_min, cfg.speed_max);
  scene.cam_vel[2] = rng.uniform(-0.4, 0.4);
  const CameraModel cam = canonical_camera(cfg.height, cfg.width);
  for (int i = 0; i < cfg.objects; ++i) {
    SceneRect r;
    r.z = rng.uniform(2.0, 0.6 * cfg.max_range);
    const double view_w = r.z * cfg.width / cam.fx;
    const double view_h = r.z * cfg.height / cam.fy;
    const double cx = rng.uniform(-0.45, 0.45) * view_w;
    const double cy = rng.uniform(-0.45, 0.05) * view_h; // mostly above the ground line
    const double hw = rng.uniform(0.10, 0.28) * view_w;
    const double hh = rng.uniform(0.10, 0.28) * view_h;
    r.x0 = cx - hw;
    r.x1 = cx + hw;
    r.y0 = cy - hh;
    r.y1 = cy + hh;
    r.base = rng.uniform(0.2, 0.8);
    r.texture = rng.uniform(0.08, 0.18);
    r.period = rng.uniform(0.3, 0.8) * std::max(0.2, hw);
    scene.rects.push_back(r);
  }
  return scene;
}

struct RenderSample {
  double depth = 0;     // camera-frame z in meters; 0 = no hit within range
  double intensity = 0; // in (0, 1]
};

// Texture amplitude is attenuated once its on-screen period drops under ~4
// pixels, so distant surfaces cannot alias into flickering events.
inline double texture_attenuation(double focal, double period_m, double depth_m) {
  const double screen_period = focal * period_m / depth_m;
  const double q = screen_period / 4.0;
  return q >= 1.0 ? 1.0 : q * q;
}

inline RenderSample render_pixel(const Scene& scene, const SceneConfig& cfg,
                                 const CameraModel& cam, const std::array<double, 3>& cam_pos,
                                 int u, int v) {
  const double dx = (u - cam.cx) / cam.fx;
  const double dy = (v - cam.cy) / cam.fy;
  RenderSample out;
  out.intensity = scene.sky_intensity;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : scene.rects) {
    const double s = r.z - cam_pos[2];
    if (s <= 0.1 || s >= best) continue;
    const double wx = cam_pos[0] + s * dx;
    const double wy = cam_pos[1] + s * dy;
    if (wx < r.x0 || wx > r.x1 || wy < r.y0 || wy > r.y1) continue;
    best = s;
    out.intensity = r.base +
                    r.texture * texture_attenuation(cam.fx, r.period, s) *
                        std::sin(6.283185307179586 * wx / r.period) *
                        std::sin(6.283185307179586 * wy / r.period);
  }
  if (dy > 1e-6) {
    const double s = (scene.ground_y - cam_pos[1]) / dy;
    if (s > 0.1 && s < best) {
      best = s;
      const double wx = cam_pos[0] + s * dx;
      const double wz = cam_pos[2] + s;
      out.intensity = scene.ground_base +
                      scene.ground_texture * texture_attenuation(cam.fx, scene.ground_period, s) *
                          std::sin(6.283185307179586 * wx / scene.ground_period) *
                          std::sin(6.283185307179586 * wz / scene.ground_period);
    }
  }
  if (std::isfinite(best) && best <= cfg.max_range) out.depth = best;
  out.intensity = std::min(1.0, std::max(0.05, out.intensity));
  return out;
}

struct WindowRecord {
  EventWindow events;
  std::optional<std::vector<std::array<float, 3>>> lidar_points;
  Tensor<float> gt; // (H, W, 1), normalized by max_range
};

struct SequenceSample {
  SceneConfig cfg;
  Scene scene;
  std::vector<WindowRecord> windows;
};

inline std::array<double, 3> camera_position(const Scene& scene, double t_seconds) {
  return {scene.cam_vel[0] * t_seconds, scene.cam_vel[1] * t_seconds, scene.cam_vel[2] * t_seconds};
}

inline SequenceSample generate_from_scene(const SceneConfig& cfg, const Scene& scene) {
  cfg.validate();
  const CameraModel cam = canonical_camera(cfg.height, cfg.width);
  const int H = cfg.height, W = cfg.width;
  const double dt_s = cfg.dt_us * 1e-6;

  SequenceSample sample;
  sample.cfg = cfg;
  sample.scene = scene;

  auto render_log = [&](double t, std::vector<double>& log_i) {
    const auto pos = camera_position(scene, t);
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u)
        log_i[std::size_t(v) * W + u] = std::log(render_pixel(scene, cfg, cam, pos, u, v).intensity);
  };

  std::vector<double> ref(std::size_t(H) * W), prev(ref.size()), cur(ref.size());
  render_log(0.0, ref);
  prev = ref;
  double t_prev = 0.0;

  for (int w = 0; w < cfg.windows; ++w) {
    WindowRecord rec;
    rec.events.t_start_us = std::uint64_t(w) * cfg.dt_us;
    rec.events.t_end_us = std::uint64_t(w + 1) * cfg.dt_us;

    for (int j = 1; j <= cfg.subframes; ++j) {
      const double t = (w + double(j) / cfg.subframes) * dt_s;
      render_log(t, cur);
      for (std::size_t p = 0; p < cur.size(); ++p) {
        const double a = prev[p], b = cur[p];
        if (a == b) continue;
        // walk the threshold crossings between the two sub-frames
        while (true) {
          double target;
          int pol;
          if (b - ref[p] >= cfg.contrast) {
            target = ref[p] + cfg.contrast;
            pol = +1;
          } else if (b - ref[p] <= -cfg.contrast) {
            target = ref[p] - cfg.contrast;
            pol = -1;
          } else {
            break;
          }
          const double frac = std::min(1.0, std::max(0.0, (target - a) / (b - a)));
          const double tc = t_prev + frac * (t - t_prev);
          std::uint64_t t_us = std::uint64_t(std::llround(tc * 1e6));
          if (t_us < rec.events.t_start_us) t_us = rec.events.t_start_us;
          if (t_us >= rec.events.t_end_us) t_us = rec.events.t_end_us - 1;
          EventRecord e;
          e.t_us = t_us;
          e.x = static_cast<std::uint16_t>(p % W);
          e.y = static_cast<std::uint16_t>(p / W);
          e.polarity = static_cast<std::int8_t>(pol);
          rec.events.events.push_back(e);
          ref[p] = target;
        }
      }
      std::swap(prev, cur);
      t_prev = t;
    }
    std::sort(rec.events.events.begin(), rec.events.events.end(),
              [](const EventRecord& a, const EventRecord& b) {
                if (a.t_us != b.t_us) return a.t_us < b.t_us;
                if (a.y != b.y) return a.y < b.y;
                if (a.x != b.x) return a.x < b.x;
                return a.polarity < b.polarity;
              });

    // z-buffer at the window end
    rec.gt = Tensor<float>({H, W, 1});
    const auto end_pos = camera_position(scene, (w + 1) * dt_s);
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        const auto r = render_pixel(scene, cfg, cam, end_pos, u, v);
        if (r.depth > 0) rec.gt.at(v, u, 0) = static_cast<float>(r.depth / cfg.max_range);
      }

    if (w % cfg.lidar_period == 0) {
      std::vector<std::array<float, 3>> points;
      for (int i = 0; i < cfg.lidar_rows; ++i) {
        const int v = (2 * i + 1) * H / (2 * cfg.lidar_rows);
        for (int u = 0; u < W; u += 2) {
          const float d = rec.gt.at(v, u, 0);
          if (d <= 0) continue;
          const double z = double(d) * cfg.max_range;
          points.push_back({static_cast<float>((u - cam.cx) / cam.fx * z),
                            static_cast<float>((v - cam.cy) / cam.fy * z), static_cast<float>(z)});
        }
      }
      rec.lidar_points = std::move(points);
    }
    sample.windows.push_back(std::move(rec));
  }
  return sample;
}

inline SequenceSample generate_sequence(const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  return generate_from_scene(cfg, sample_scene(cfg, rng));
}

// Nearest-valid-neighbor fill; the non-learned baseline the network must beat.
// Ties in distance keep the valid pixel that comes first in row-major order.
template <typename T>
Tensor<T> baseline_interpolate(const Tensor<T>& sparse) {
  const int H = sparse.shape[0], W = sparse.shape[1];
  struct Valid {
    int r, c;
    T v;
  };
  std::vector<Valid> valid;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      if (sparse.at(r, c, 0) > T(0)) valid.push_back({r, c, sparse.at(r, c, 0)});
  if (valid.empty()) throw DataError("baseline_interpolate: no valid pixels");
  Tensor<T> out({H, W, 1});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      long best = std::numeric_limits<long>::max();
      T val = T(0);
      for (const auto& s : valid) {
        const long d = long(s.r - r) * (s.r - r) + long(s.c - c) * (s.c - c);
        if (d < best) {
          best = d;
          val = s.v;
        }
      }
      out.at(r, c, 0) = val;
    }
  return out;
}

// --------------------------------------------------------------------------
// Dataset directory layout:
//   <dir>/seq_<id>/meta.txt          key=value: H, W, dt_us, k, max_range, T
//   <dir>/seq_<id>/events_<t>.devt
//   <dir>/seq_<id>/lidar_<t>.dlid    arrival steps only (t = 0 mod k)
//   <dir>/seq_<id>/gt_<t>.df32

inline void write_sequence_dir(const std::string& dir, const SequenceSample& sample) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char buf[64];
  std::string meta;
  meta += "H=" + std::to_string(sample.cfg.height) + "\n";
  meta += "W=" + std::to_string(sample.cfg.width) + "\n";
  meta += "dt_us=" + std::to_string(sample.cfg.dt_us) + "\n";
  meta += "k=" + std::to_string(sample.cfg.lidar_period) + "\n";
  std::snprintf(buf, sizeof buf, "%.17g", sample.cfg.max_range);
  meta += std::string("max_range=") + buf + "\n";
  meta += "T=" + std::to_string(sample.cfg.windows) + "\n";
  wire::write_file(dir + "/meta.txt", meta);
  for (std::size_t t = 0; t < sample.windows.size(); ++t) {
    const auto& w = sample.windows[t];
    write_events(dir + "/events_" + std::to_string(t) + ".devt", w.events);
    if (w.lidar_points)
      write_lidar(dir + "/lidar_" + std::to_string(t) + ".dlid", *w.lidar_points);
    write_raster(dir + "/gt_" + std::to_string(t) + ".df32", w.gt);
  }
}

struct LoadedSequence {
  int height = 0, width = 0;
  std::int64_t dt_us = 0;
  int lidar_period = 1;
  double max_range = 0;
  int windows = 0;
  std::vector<WindowInput<float>> inputs;        // event volumes + projected lidar + gt
  std::vector<Tensor<float>> lidar_rasters;      // latest raster per window (for baselines)
};

inline LoadedSequence load_sequence_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir + "/meta.txt")) throw DataError("missing " + dir + "/meta.txt");
  LoadedSequence seq;
  {
    std::ifstream f(dir + "/meta.txt");
    std::string line;
    while (std::getline(f, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "H") seq.height = std::stoi(val);
      else if (key == "W") seq.width = std::stoi(val);
      else if (key == "dt_us") seq.dt_us = std::stoll(val);
      else if (key == "k") seq.lidar_period = std::stoi(val);
      else if (key == "max_range") seq.max_range = std::stod(val);
      else if (key == "T") seq.windows = std::stoi(val);
      else throw DataError(dir + "/meta.txt: unknown key " + key);
    }
  }
  if (seq.height < 1 || seq.width < 1 || seq.windows < 1 || seq.dt_us <= 0 || seq.max_range <= 0)
    throw DataError(dir + "/meta.txt: incomplete");
  const CameraModel cam = canonical_camera(seq.height, seq.width);
  Tensor<float> latest;
  bool have_latest = false;
  for (int t = 0; t < seq.windows; ++t) {
    WindowInput<float> in;
    EventWindow win;
    win.t_start_us = std::uint64_t(t) * seq.dt_us;
    win.t_end_us = std::uint64_t(t + 1) * seq.dt_us;
    const std::string epath = dir + "/events_" + std::to_string(t) + ".devt";
    if (!fs::exists(epath)) throw DataError("missing " + epath);
    win.events = read_events(epath);
    in.event_volume = build_event_volume<float>(win, seq.height, seq.width, kEventBins);
    const std::string lpath = dir + "/lidar_" + std::to_string(t) + ".dlid";
    if (fs::exists(lpath)) {
      auto raster = project_lidar<float>(read_lidar(lpath), cam, seq.height, seq.width, seq.max_range);
      in.lidar = raster;
      latest = raster;
      have_latest = true;
    }
    const std::string gpath = dir + "/gt_" + std::to_string(t) + ".df32";
    if (!fs::exists(gpath)) throw DataError("missing " + gpath);
    in.gt = read_raster(gpath);
    seq.inputs.push_back(std::move(in));
    seq.lidar_rasters.push_back(have_latest ? latest : Tensor<float>({seq.height, seq.width, 1}));
  }
  return seq;
}

inline std::vector<std::string> list_sequence_dirs(const std::string& dataset_dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dataset_dir)) throw DataError("not a dataset directory: " + dataset_dir);
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(dataset_dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("seq_", 0) == 0)
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no seq_* directories under " + dataset_dir);
  return dirs;
}

} // namespace delta
