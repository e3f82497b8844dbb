#include <filesystem>

#include "gtest/gtest.h"

#include "delta/io.hpp"
#include "delta/sensor.hpp"

using delta::EventRecord;
using delta::EventWindow;
using delta::Tensor;

namespace {

EventWindow make_window(std::uint64_t t0, std::uint64_t t1) {
  EventWindow w;
  w.t_start_us = t0;
  w.t_end_us = t1;
  return w;
}

std::filesystem::path tmp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "delta_sensor_test";
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

TEST(EventVolume, EmptyWindowIsZero) {
  auto vol = delta::build_event_volume<float>(make_window(0, 50000), 8, 8);
  EXPECT_EQ(vol.shape, (delta::Shape{8, 8, 4}));
  for (float v : vol.data) EXPECT_EQ(v, 0.0f);
}

TEST(EventVolume, MidWindowEventSplitsBins) {
  auto w = make_window(0, 50000);
  w.events.push_back({25000, 3, 5, +1});
  auto vol = delta::build_event_volume<double>(w, 8, 8);
  // t* = 0.5 * 3 = 1.5
  EXPECT_NEAR(vol.at(5, 3, 0), 0.0, 1e-12);
  EXPECT_NEAR(vol.at(5, 3, 1), 0.5, 1e-12);
  EXPECT_NEAR(vol.at(5, 3, 2), 0.5, 1e-12);
  EXPECT_NEAR(vol.at(5, 3, 3), 0.0, 1e-12);
}

TEST(EventVolume, MatchesBruteForceAccumulation) {
  delta::Rng rng(42);
  for (int seed = 0; seed < 5; ++seed) {
    auto w = make_window(1000, 51000);
    const int H = 16, W = 24;
    for (int i = 0; i < 1000; ++i) {
      EventRecord e;
      e.t_us = w.t_start_us + rng.uniform_int(w.t_end_us - w.t_start_us);
      e.x = static_cast<std::uint16_t>(rng.uniform_int(W));
      e.y = static_cast<std::uint16_t>(rng.uniform_int(H));
      e.polarity = rng.uniform() < 0.5 ? -1 : 1;
      w.events.push_back(e);
    }
    std::sort(w.events.begin(), w.events.end(),
              [](const EventRecord& a, const EventRecord& b) { return a.t_us < b.t_us; });
    auto vol = delta::build_event_volume<double>(w, H, W);

    // independent per-event accumulation
    Tensor<double> ref({H, W, 4});
    double mass = 0;
    for (const auto& e : w.events) {
      const double tstar = double(e.t_us - w.t_start_us) / 50000.0 * 3.0;
      const int k = std::min(2, int(tstar));
      ref.at(e.y, e.x, k) += e.polarity * (1.0 - (tstar - k));
      ref.at(e.y, e.x, k + 1) += e.polarity * (tstar - k);
      mass += e.polarity;
    }
    for (std::size_t i = 0; i < ref.numel(); ++i) EXPECT_NEAR(vol.data[i], ref.data[i], 1e-6);

    double total = 0;
    for (double v : vol.data) total += v;
    EXPECT_NEAR(total, mass, 1e-4); // bilinear kernel is a partition of unity
  }
}

TEST(EventVolume, RejectsOutOfWindowAndOutOfBounds) {
  auto w = make_window(1000, 2000);
  w.events.push_back({2000, 0, 0, 1}); // exactly t_end -> next window
  EXPECT_THROW(delta::build_event_volume<float>(w, 4, 4), delta::DataError);
  try {
    delta::build_event_volume<float>(w, 4, 4);
  } catch (const delta::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("event 0"), std::string::npos);
  }
  w.events[0] = {1500, 9, 0, 1};
  EXPECT_THROW(delta::build_event_volume<float>(w, 4, 4), delta::DataError);
  w.events[0] = {1500, 1, 1, 0};
  EXPECT_THROW(delta::build_event_volume<float>(w, 4, 4), delta::DataError);
}

TEST(ProjectLidar, EmptyCloudAllZero) {
  auto img = delta::project_lidar<float>({}, delta::canonical_camera(8, 8), 8, 8, 100.0);
  for (float v : img.data) EXPECT_EQ(v, 0.0f);
}

TEST(ProjectLidar, OpticalAxisPoint) {
  delta::CameraModel cam;
  cam.fx = cam.fy = 50;
  cam.cx = cam.cy = 32;
  cam.validate();
  auto img = delta::project_lidar<double>({{0.0f, 0.0f, 10.0f}}, cam, 64, 64, 200.0);
  EXPECT_DOUBLE_EQ(img.at(32, 32, 0), 0.05);
  double sum = 0;
  for (double v : img.data) sum += v;
  EXPECT_DOUBLE_EQ(sum, 0.05);
}

TEST(ProjectLidar, NearestDepthWinsAndOrderIrrelevant) {
  delta::CameraModel cam;
  cam.fx = cam.fy = 50;
  cam.cx = cam.cy = 16;
  std::vector<std::array<float, 3>> pts = {{0, 0, 30}, {0, 0, 10}};
  auto a = delta::project_lidar<double>(pts, cam, 32, 32, 100.0);
  std::swap(pts[0], pts[1]);
  auto b = delta::project_lidar<double>(pts, cam, 32, 32, 100.0);
  EXPECT_DOUBLE_EQ(a.at(16, 16, 0), 0.1);
  EXPECT_EQ(a.data, b.data);
}

TEST(ProjectLidar, DiscardsBehindBeyondAndOutside) {
  delta::CameraModel cam;
  cam.fx = cam.fy = 50;
  cam.cx = cam.cy = 16;
  auto img = delta::project_lidar<double>(
      {{0, 0, -5}, {0, 0, 150}, {100, 0, 1}}, cam, 32, 32, 100.0);
  for (double v : img.data) EXPECT_EQ(v, 0.0);
}

TEST(ProjectLidar, PermutationInvariance) {
  delta::Rng rng(5);
  delta::CameraModel cam = delta::canonical_camera(24, 32);
  std::vector<std::array<float, 3>> pts;
  for (int i = 0; i < 200; ++i)
    pts.push_back({float(rng.uniform(-3, 3)), float(rng.uniform(-2, 2)), float(rng.uniform(0.5, 40))});
  auto a = delta::project_lidar<float>(pts, cam, 24, 32, 50.0);
  for (int s = 0; s < 5; ++s) {
    for (std::size_t i = pts.size(); i > 1; --i) std::swap(pts[i - 1], pts[rng.uniform_int(i)]);
    auto b = delta::project_lidar<float>(pts, cam, 24, 32, 50.0);
    EXPECT_EQ(a.data, b.data);
  }
}

TEST(RandomCrop, FullSizeIsIdentity) {
  delta::Rng rng(1);
  Tensor<float> ev({16, 16, 4}), li({16, 16, 1}), gt({16, 16, 1});
  for (auto& v : ev.data) v = static_cast<float>(rng.uniform());
  auto c = delta::random_crop(ev, li, gt, 16, 16, 8, rng);
  EXPECT_EQ(c.event_volume.data, ev.data);
  EXPECT_EQ(c.row, 0);
  EXPECT_EQ(c.col, 0);
}

TEST(RandomCrop, PaperScaleShapes) {
  delta::Rng rng(2);
  Tensor<float> ev({720, 1280, 4}), li({720, 1280, 1}), gt({720, 1280, 1});
  auto c = delta::random_crop(ev, li, gt, 512, 512, 16, rng);
  EXPECT_EQ(c.event_volume.shape, (delta::Shape{512, 512, 4}));
  EXPECT_EQ(c.lidar.shape, (delta::Shape{512, 512, 1}));
  EXPECT_EQ(c.gt.shape, (delta::Shape{512, 512, 1}));
  EXPECT_EQ(c.row % 16, 0);
  EXPECT_EQ(c.col % 16, 0);
}

TEST(RandomCrop, LowResolutionCropAfterPadding) {
  delta::Rng rng(3);
  Tensor<float> raw({346, 260, 4});
  auto padded = delta::pad_to_patch_multiple(raw, 12);
  EXPECT_EQ(padded.raster.shape, (delta::Shape{348, 264, 4}));
  Tensor<float> li({348, 264, 1}), gt({348, 264, 1});
  auto c = delta::random_crop(padded.raster, li, gt, 252, 252, 12, rng);
  EXPECT_EQ(c.event_volume.shape, (delta::Shape{252, 252, 4}));
}

TEST(RandomCrop, OversizeRejected) {
  delta::Rng rng(4);
  Tensor<float> ev({16, 16, 4}), li({16, 16, 1}), gt({16, 16, 1});
  EXPECT_THROW(delta::random_crop(ev, li, gt, 32, 32, 8, rng), delta::UsageError);
}

TEST(RandomCrop, SeededReproducibility) {
  Tensor<float> ev({64, 64, 4}), li({64, 64, 1}), gt({64, 64, 1});
  delta::Rng a(77), b(77);
  for (int i = 0; i < 20; ++i) {
    auto ca = delta::random_crop(ev, li, gt, 32, 32, 16, a);
    auto cb = delta::random_crop(ev, li, gt, 32, 32, 16, b);
    EXPECT_EQ(ca.row, cb.row);
    EXPECT_EQ(ca.col, cb.col);
  }
}

TEST(Padding, AlreadyMultipleUnchanged) {
  Tensor<float> r({64, 64, 2});
  auto p = delta::pad_to_patch_multiple(r, 16);
  EXPECT_EQ(p.raster.shape, r.shape);
  EXPECT_EQ(p.orig_h, 64);
}

TEST(Padding, HighResolutionNeedsNoPadding) {
  Tensor<float> r({720, 1280, 1});
  auto p = delta::pad_to_patch_multiple(r, 16);
  EXPECT_EQ(p.raster.shape, (delta::Shape{720, 1280, 1}));
}

TEST(Padding, UnpadRestoresOriginal) {
  delta::Rng rng(9);
  Tensor<float> r({10, 13, 2});
  for (auto& v : r.data) v = static_cast<float>(rng.uniform());
  auto p = delta::pad_to_patch_multiple(r, 4);
  EXPECT_EQ(p.raster.shape, (delta::Shape{12, 16, 2}));
  auto u = delta::unpad(p.raster, p.orig_h, p.orig_w);
  EXPECT_EQ(u.data, r.data);
}

TEST(Formats, EventFileRoundTrip) {
  EventWindow w = make_window(0, 50000);
  w.events.push_back({100, 3, 4, 1});
  w.events.push_back({49999, 600, 2, -1});
  const auto path = (tmp_dir() / "events.devt").string();
  delta::write_events(path, w);
  auto evs = delta::read_events(path);
  ASSERT_EQ(evs.size(), 2u);
  EXPECT_EQ(evs[1].t_us, 49999u);
  EXPECT_EQ(evs[1].x, 600);
  EXPECT_EQ(evs[1].polarity, -1);
  // byte-level prefix: magic + version + count, then first record
  const std::string bytes = delta::encode_events(w);
  EXPECT_EQ(bytes.substr(0, 4), "DEVT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 100); // t_us LSB
  EXPECT_EQ(bytes.size(), 12u + 2 * 13);
}

TEST(Formats, LidarAndRasterRoundTrip) {
  const auto dir = tmp_dir();
  std::vector<std::array<float, 3>> pts = {{1.5f, -2.0f, 10.0f}, {0.0f, 0.25f, 3.5f}};
  delta::write_lidar((dir / "l.dlid").string(), pts);
  EXPECT_EQ(delta::read_lidar((dir / "l.dlid").string()), pts);

  Tensor<float> r({3, 5, 1});
  delta::Rng rng(6);
  for (auto& v : r.data) v = static_cast<float>(rng.uniform());
  delta::write_raster((dir / "r.df32").string(), r);
  auto rr = delta::read_raster((dir / "r.df32").string());
  EXPECT_EQ(rr.shape, r.shape);
  EXPECT_EQ(rr.data, r.data);
}

TEST(Formats, NormalizationRoundTrip) {
  // un-normalizing then re-normalizing is the identity within 1e-7
  delta::Rng rng(10);
  const double max_range = 50.0;
  for (int i = 0; i < 1000; ++i) {
    const float d = static_cast<float>(rng.uniform());
    const float m = static_cast<float>(d * max_range);
    EXPECT_NEAR(m / max_range, d, 1e-7);
  }
}
