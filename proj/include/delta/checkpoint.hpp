#pragma once

#include <string>

#include "delta/io.hpp"
#include "delta/params.hpp"

// Parameter checkpoint:
//   "DLTW" | u32 version | u16 tag length | tag bytes (ASCII variant name)
//         | u32 count | count * { u16 name length | name | u8 rank
//                                | rank * u32 extents | f32 data }
// Little-endian throughout. Data is always f32 on disk regardless of the
// in-memory scalar type. Parameters are written in store insertion order.

namespace delta {

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::string encode_checkpoint(const ParamStore<T>& store, const std::string& variant_tag) {
  std::string b = "DLTW";
  wire::put_u32(b, kCheckpointVersion);
  wire::put_u16(b, static_cast<std::uint16_t>(variant_tag.size()));
  b += variant_tag;
  wire::put_u32(b, static_cast<std::uint32_t>(store.size()));
  for (const auto& name : store.names()) {
    const Param<T>& p = store.at(name);
    wire::put_u16(b, static_cast<std::uint16_t>(name.size()));
    b += name;
    b.push_back(char(static_cast<std::uint8_t>(p.value.rank())));
    for (int e : p.value.shape) wire::put_u32(b, static_cast<std::uint32_t>(e));
    for (const auto& v : p.value.data) wire::put_f32(b, static_cast<float>(v));
  }
  return b;
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const std::string& variant_tag) {
  wire::write_file(path, encode_checkpoint(store, variant_tag));
}

struct LoadedCheckpoint {
  std::string variant_tag;
  std::vector<std::pair<std::string, Tensor<float>>> params;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  wire::Reader r(wire::read_file(path), path);
  r.expect_magic("DLTW");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  LoadedCheckpoint out;
  out.variant_tag = r.bytes(r.u16());
  const std::uint32_t count = r.u32();
  out.params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.u16());
    const int rank = r.u8();
    if (rank < 1) r.fail("parameter " + name + " has rank 0");
    Shape shape(rank);
    for (int d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
    Tensor<float> t(shape);
    for (auto& v : t.data) v = r.f32();
    out.params.emplace_back(std::move(name), std::move(t));
  }
  r.expect_end();
  return out;
}

// Copies loaded values into an existing store; the store defines the expected
// parameter set, so it reports missing/extra names and shape mismatches
// (how a config/resolution mismatch against a checkpoint surfaces).
template <typename T>
void assign_checkpoint(ParamStore<T>& store, const LoadedCheckpoint& ckpt) {
  if (ckpt.params.size() != store.size())
    throw DataError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, network expects " +
                    std::to_string(store.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    if (!store.has(name)) throw DataError("checkpoint parameter not in network: " + name);
    Param<T>& p = store.at(name);
    if (p.value.shape != tensor.shape)
      throw DataError("checkpoint shape mismatch for " + name + ": file " + shape_str(tensor.shape) +
                      " vs network " + shape_str(p.value.shape));
    for (std::size_t i = 0; i < tensor.data.size(); ++i)
      p.value.data[i] = static_cast<T>(tensor.data[i]);
  }
}

} // namespace delta
