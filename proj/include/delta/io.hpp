#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "delta/error.hpp"
#include "delta/sensor.hpp"
#include "delta/tensor.hpp"

// Binary file formats. All multi-byte values are little-endian; the byte
// layouts here are normative and covered by round-trip tests.
//
//   events  "DEVT" | u32 version | u32 count | {u64 t_us, u16 x, u16 y, i8 polarity}*
//   lidar   "DLID" | u32 count | {f32 x, f32 y, f32 z}*
//   raster  "DF32" | u32 H | u32 W | f32 row-major values (normalized depth)

namespace delta {
namespace wire {

inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(char(v & 0xff));
  b.push_back(char(v >> 8));
}
inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(byte()); }
  std::uint16_t u16() { return std::uint16_t(u8()) | std::uint16_t(u8()) << 8; }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::int8_t i8() { return static_cast<std::int8_t>(byte()); }

  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) fail("truncated");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char* magic) {
    if (bytes(4) != magic) fail(std::string("bad magic, expected ") + magic);
  }

  bool at_end() const { return pos_ == data_.size(); }
  void expect_end() {
    if (!at_end()) fail("trailing bytes");
  }

  [[noreturn]] void fail(const std::string& what) { throw DataError(path_ + ": " + what); }

private:
  char byte() {
    if (pos_ >= data_.size()) fail("truncated");
    return data_[pos_++];
  }
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw DataError("write failed: " + path);
}

} // namespace wire

inline std::string encode_events(const EventWindow& win) {
  std::string b = "DEVT";
  wire::put_u32(b, 1);
  wire::put_u32(b, static_cast<std::uint32_t>(win.events.size()));
  for (const auto& e : win.events) {
    wire::put_u64(b, e.t_us);
    wire::put_u16(b, e.x);
    wire::put_u16(b, e.y);
    b.push_back(char(e.polarity));
  }
  return b;
}

inline void write_events(const std::string& path, const EventWindow& win) {
  wire::write_file(path, encode_events(win));
}

// Window bounds are not stored in the file; the caller supplies them (the
// dataset layout derives them from the window index and dt).
inline std::vector<EventRecord> read_events(const std::string& path) {
  wire::Reader r(wire::read_file(path), path);
  r.expect_magic("DEVT");
  const std::uint32_t version = r.u32();
  if (version != 1) r.fail("unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<EventRecord> events(count);
  for (auto& e : events) {
    e.t_us = r.u64();
    e.x = r.u16();
    e.y = r.u16();
    e.polarity = r.i8();
  }
  r.expect_end();
  return events;
}

inline std::string encode_lidar(const std::vector<std::array<float, 3>>& points) {
  std::string b = "DLID";
  wire::put_u32(b, static_cast<std::uint32_t>(points.size()));
  for (const auto& p : points) {
    wire::put_f32(b, p[0]);
    wire::put_f32(b, p[1]);
    wire::put_f32(b, p[2]);
  }
  return b;
}

inline void write_lidar(const std::string& path, const std::vector<std::array<float, 3>>& points) {
  wire::write_file(path, encode_lidar(points));
}

inline std::vector<std::array<float, 3>> read_lidar(const std::string& path) {
  wire::Reader r(wire::read_file(path), path);
  r.expect_magic("DLID");
  const std::uint32_t count = r.u32();
  std::vector<std::array<float, 3>> points(count);
  for (auto& p : points) {
    p[0] = r.f32();
    p[1] = r.f32();
    p[2] = r.f32();
  }
  r.expect_end();
  return points;
}

inline std::string encode_raster(const Tensor<float>& raster) {
  if (raster.rank() != 3 || raster.shape[2] != 1)
    throw ShapeError("raster file stores (H,W,1), got " + shape_str(raster.shape));
  std::string b = "DF32";
  wire::put_u32(b, static_cast<std::uint32_t>(raster.shape[0]));
  wire::put_u32(b, static_cast<std::uint32_t>(raster.shape[1]));
  for (float v : raster.data) wire::put_f32(b, v);
  return b;
}

inline void write_raster(const std::string& path, const Tensor<float>& raster) {
  wire::write_file(path, encode_raster(raster));
}

inline Tensor<float> read_raster(const std::string& path) {
  wire::Reader r(wire::read_file(path), path);
  r.expect_magic("DF32");
  const int H = static_cast<int>(r.u32());
  const int W = static_cast<int>(r.u32());
  if (H < 1 || W < 1) r.fail("bad raster size");
  Tensor<float> t({H, W, 1});
  for (auto& v : t.data) v = r.f32();
  r.expect_end();
  return t;
}

// Binary PGM (P5), depth mapped 0 -> white, far -> black.
inline void write_depth_pgm(const std::string& path, const Tensor<float>& normalized) {
  const int H = normalized.shape[0], W = normalized.shape[1];
  std::string b = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  for (float v : normalized.data) {
    float d = std::min(std::max(v, 0.0f), 1.0f);
    b.push_back(char(static_cast<unsigned char>(std::lround((1.0f - d) * 255.0f))));
  }
  wire::write_file(path, b);
}

} // namespace delta
