#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "delta/error.hpp"

namespace delta {

using Shape = std::vector<int>;

inline std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Dense row-major tensor. All extents are >= 1 and data.size() == product(shape).
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)) {
    validate_shape();
    data.assign(numel_of(shape), T(0));
  }

  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    validate_shape();
    if (data.size() != numel_of(shape))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Tensor full(Shape s, T value) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = value;
    return t;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  std::size_t numel() const { return data.size(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // Row-major offsets for the common low ranks.
  T& at(int i) { return data[static_cast<std::size_t>(i)]; }
  const T& at(int i) const { return data[static_cast<std::size_t>(i)]; }
  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  T& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T& at(int i, int j, int k, int l) {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& at(int i, int j, int k, int l) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

private:
  void validate_shape() const {
    if (shape.empty()) throw ShapeError("tensor rank must be >= 1");
    for (int e : shape)
      if (e < 1) throw ShapeError("tensor extent must be >= 1, got shape " + shape_str(shape));
  }
};

} // namespace delta
