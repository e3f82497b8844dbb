#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "delta/error.hpp"
#include "delta/params.hpp"
#include "delta/tensor.hpp"

// Reverse-mode dense-tensor tape. Graphs are built define-by-run: every kernel
// evaluates eagerly when its node is created, and records a closure that pushes
// gradients back to its inputs. Evaluation order is fixed and single-threaded,
// so repeated runs over identical inputs are bit-identical.

namespace delta {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int node = -1;
};

template <typename T>
class Tape {
public:
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    std::string op;
    std::vector<int> inputs;
    Tensor<T> value;
    Tensor<T> grad; // empty until touched by backward
    BackwardFn backward;
    Param<T>* param = nullptr;
  };

  Var<T> constant(Tensor<T> value) {
    return make("constant", {}, std::move(value), nullptr);
  }

  Var<T> param(ParamStore<T>& store, const std::string& name) {
    Param<T>& p = store.at(name);
    Var<T> v = make("param:" + name, {}, p.value, nullptr);
    nodes_[v.node].param = &p;
    return v;
  }

  Var<T> make(std::string op, std::vector<int> inputs, Tensor<T> value, BackwardFn fn) {
    Node n;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.node).value; }
  Node& node(int i) { return nodes_.at(i); }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Output of the final node; the graph has already been evaluated eagerly.
  const Tensor<T>& forward() const {
    if (nodes_.empty()) throw ShapeError("forward on empty graph");
    return nodes_.back().value;
  }

  // Gradient of the last backward()'s loss w.r.t. v. Zero if v does not reach the loss.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.node);
    if (n.grad.data.empty()) return Tensor<T>(n.value.shape);
    return n.grad;
  }

  // Populates node gradients and accumulates (+=) into every parameter's grad buffer.
  void backward(Var<T> loss) {
    Node& ln = nodes_.at(loss.node);
    for (int e : ln.value.shape)
      if (e != 1)
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(ln.value.shape));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    ln.grad = Tensor<T>::full(ln.value.shape, T(1));
    for (int i = loss.node; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.data.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.param && !n.grad.data.empty()) {
        Tensor<T>& pg = n.param->grad_buf();
        for (std::size_t k = 0; k < n.grad.data.size(); ++k) pg.data[k] += n.grad.data[k];
      }
    }
  }

  Tensor<T>& grad_buf(int i) {
    Node& n = nodes_.at(i);
    if (n.grad.data.empty()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }

private:
  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
[[noreturn]] void shape_fail(const Tape<T>& tape, const std::string& op, const std::string& what) {
  throw ShapeError("node " + std::to_string(tape.size()) + " (" + op + "): " + what);
}

// b may equal a's shape or a suffix of it (trailing-axis broadcast).
template <typename T>
int broadcast_reps(Tape<T>& tape, const std::string& op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape == b.shape) return 1;
  if (b.rank() < a.rank() &&
      std::equal(b.shape.begin(), b.shape.end(), a.shape.end() - b.rank())) {
    return static_cast<int>(a.numel() / b.numel());
  }
  shape_fail(tape, op, "expected " + shape_str(a.shape) + " or a trailing suffix of it, got " +
                           shape_str(b.shape));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>&av = tp.value(a), &bv = tp.value(b);
  detail::broadcast_reps(tp, "add", av, bv);
  Tensor<T> out = av;
  const std::size_t bn = bv.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i % bn];
  return tp.make("add", {a.node, b.node}, std::move(out), [a, b, bn](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>&ga = t.grad_buf(a.node), &gb = t.grad_buf(b.node);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i % bn] += g.data[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>&av = tp.value(a), &bv = tp.value(b);
  detail::broadcast_reps(tp, "sub", av, bv);
  Tensor<T> out = av;
  const std::size_t bn = bv.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= bv.data[i % bn];
  return tp.make("sub", {a.node, b.node}, std::move(out), [a, b, bn](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>&ga = t.grad_buf(a.node), &gb = t.grad_buf(b.node);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i % bn] -= g.data[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>&av = tp.value(a), &bv = tp.value(b);
  detail::broadcast_reps(tp, "mul", av, bv);
  Tensor<T> out = av;
  const std::size_t bn = bv.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i % bn];
  return tp.make("mul", {a.node, b.node}, std::move(out), [a, b, bn](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>&av2 = t.node(a.node).value, &bv2 = t.node(b.node).value;
    Tensor<T>&ga = t.grad_buf(a.node), &gb = t.grad_buf(b.node);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      ga.data[i] += g.data[i] * bv2.data[i % bn];
      gb.data[i % bn] += g.data[i] * av2.data[i];
    }
  });
}

template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>&av = tp.value(a), &bv = tp.value(b);
  if (av.shape != bv.shape)
    detail::shape_fail(tp, "maximum", "shapes differ: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::max(av.data[i], bv.data[i]);
  return tp.make("maximum", {a.node, b.node}, std::move(out), [a, b](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>&av2 = t.node(a.node).value, &bv2 = t.node(b.node).value;
    Tensor<T>&ga = t.grad_buf(a.node), &gb = t.grad_buf(b.node);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (av2.data[i] >= bv2.data[i])
        ga.data[i] += g.data[i];
      else
        gb.data[i] += g.data[i];
    }
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  Tensor<T> out = tp.value(a);
  for (auto& v : out.data) v += c;
  return tp.make("add_scalar", {a.node}, std::move(out), [a](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& ga = t.grad_buf(a.node);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
  });
}

template <typename T>
Var<T> mul_scalar(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  Tensor<T> out = tp.value(a);
  for (auto& v : out.data) v *= c;
  return tp.make("mul_scalar", {a.node}, std::move(out), [a, c](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& ga = t.grad_buf(a.node);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * c;
  });
}

// ---------------------------------------------------------------------------
// Unary nonlinearities

template <typename T, typename FwdFn, typename BwdFn>
Var<T> unary_op(Var<T> a, const char* name, FwdFn fwd, BwdFn bwd) {
  Tape<T>& tp = *a.tape;
  Tensor<T> out = tp.value(a);
  for (auto& v : out.data) v = fwd(v);
  return tp.make(name, {a.node}, std::move(out), [a, bwd](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& x = t.node(a.node).value;
    const Tensor<T>& y = t.node(self).value;
    Tensor<T>& ga = t.grad_buf(a.node);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * bwd(x.data[i], y.data[i]);
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary_op(
      a, "sigmoid",
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh_op(Var<T> a) {
  return unary_op(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  constexpr double inv_sqrt2 = 0.7071067811865476;
  constexpr double inv_sqrt2pi = 0.3989422804014327;
  return unary_op(
      a, "gelu",
      [=](T x) { return static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2))); },
      [=](T x, T) {
        double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
        return static_cast<T>(phi + x * pdf);
      });
}

template <typename T>
Var<T> abs_op(Var<T> a) {
  // subgradient at 0 taken as 0
  return unary_op(
      a, "abs", [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> sqrt_op(Var<T> a) {
  const Tensor<T>& av = a.tape->value(a);
  for (T v : av.data)
    if (v < T(0)) throw NumericError("sqrt of negative input");
  return unary_op(a, "sqrt", [](T x) { return std::sqrt(x); },
                  [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> log_op(Var<T> a) {
  const Tensor<T>& av = a.tape->value(a);
  for (T v : av.data)
    if (v <= T(0)) throw NumericError("log of non-positive input");
  return unary_op(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>&av = tp.value(a), &bv = tp.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    detail::shape_fail(tp, "matmul",
                       "incompatible shapes " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor<T> out({m, n});
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const T aik = av.data[std::size_t(i) * k + kk];
      const T* brow = &bv.data[std::size_t(kk) * n];
      T* orow = &out.data[std::size_t(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  return tp.make("matmul", {a.node, b.node}, std::move(out), [a, b, m, k, n](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>&av2 = t.node(a.node).value, &bv2 = t.node(b.node).value;
    Tensor<T>&ga = t.grad_buf(a.node), &gb = t.grad_buf(b.node);
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk) {
        const T* grow = &g.data[std::size_t(i) * n];
        const T* brow = &bv2.data[std::size_t(kk) * n];
        T acc = T(0);
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga.data[std::size_t(i) * k + kk] += acc;
        const T aik = av2.data[std::size_t(i) * k + kk];
        T* gbrow = &gb.data[std::size_t(kk) * n];
        for (int j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
      }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.value(a);
  if (av.rank() != 2) detail::shape_fail(tp, "transpose", "expects rank 2, got " + shape_str(av.shape));
  const int m = av.shape[0], n = av.shape[1];
  Tensor<T> out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  return tp.make("transpose", {a.node}, std::move(out), [a, m, n](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& ga = t.grad_buf(a.node);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.value(a);
  if (numel_of(shape) != av.numel())
    detail::shape_fail(tp, "reshape",
                       "cannot reshape " + shape_str(av.shape) + " to " + shape_str(shape));
  Tensor<T> out(shape, av.data);
  return tp.make("reshape", {a.node}, std::move(out), [a](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& ga = t.grad_buf(a.node);
    for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& vars, int axis) {
  if (vars.empty()) throw ShapeError("concat of zero tensors");
  Tape<T>& tp = *vars[0].tape;
  const Tensor<T>& first = tp.value(vars[0]);
  const int rank = first.rank();
  if (axis < 0 || axis >= rank) detail::shape_fail(tp, "concat", "axis out of range");
  Shape out_shape = first.shape;
  for (std::size_t i = 1; i < vars.size(); ++i) {
    const Tensor<T>& v = tp.value(vars[i]);
    if (v.rank() != rank) detail::shape_fail(tp, "concat", "rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && v.shape[d] != out_shape[d])
        detail::shape_fail(tp, "concat", "extent mismatch at axis " + std::to_string(d) + ": " +
                                             shape_str(out_shape) + " vs " + shape_str(v.shape));
    out_shape[axis] += v.shape[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first.shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= first.shape[d];

  Tensor<T> out(out_shape);
  std::vector<int> in_nodes;
  std::vector<std::size_t> block; // per input: extent(axis) * inner
  for (auto v : vars) {
    in_nodes.push_back(v.node);
    block.push_back(tp.value(v).shape[axis] * inner);
  }
  const std::size_t out_block = static_cast<std::size_t>(out_shape[axis]) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * out_block;
    for (std::size_t vi = 0; vi < vars.size(); ++vi) {
      const Tensor<T>& v = tp.value(vars[vi]);
      std::copy_n(v.data.begin() + o * block[vi], block[vi], out.data.begin() + off);
      off += block[vi];
    }
  }
  return tp.make("concat", in_nodes, std::move(out),
                 [in_nodes, block, outer, out_block](Tape<T>& t, int self) {
                   const Tensor<T>& g = t.node(self).grad;
                   for (std::size_t o = 0; o < outer; ++o) {
                     std::size_t off = o * out_block;
                     for (std::size_t vi = 0; vi < in_nodes.size(); ++vi) {
                       Tensor<T>& gi = t.grad_buf(in_nodes[vi]);
                       for (std::size_t k = 0; k < block[vi]; ++k)
                         gi.data[o * block[vi] + k] += g.data[off + k];
                       off += block[vi];
                     }
                   }
                 });
}

template <typename T>
Var<T> slice(Var<T> a, int axis, int start, int len) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.value(a);
  const int rank = av.rank();
  if (axis < 0 || axis >= rank) detail::shape_fail(tp, "slice", "axis out of range");
  if (start < 0 || len < 1 || start + len > av.shape[axis])
    detail::shape_fail(tp, "slice",
                       "range [" + std::to_string(start) + "," + std::to_string(start + len) +
                           ") out of bounds for " + shape_str(av.shape));
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= av.shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= av.shape[d];
  Shape out_shape = av.shape;
  out_shape[axis] = len;
  Tensor<T> out(out_shape);
  const std::size_t in_block = static_cast<std::size_t>(av.shape[axis]) * inner;
  const std::size_t out_block = static_cast<std::size_t>(len) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.data.begin() + o * in_block + start * inner, out_block,
                out.data.begin() + o * out_block);
  return tp.make("slice", {a.node}, std::move(out),
                 [a, outer, inner, in_block, out_block, start](Tape<T>& t, int self) {
                   const Tensor<T>& g = t.node(self).grad;
                   Tensor<T>& ga = t.grad_buf(a.node);
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t k = 0; k < out_block; ++k)
                       ga.data[o * in_block + start * inner + k] += g.data[o * out_block + k];
                 });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations (last axis)

template <typename T>
Var<T> softmax(Var<T> a) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.value(a);
  const int cols = av.shape.back();
  const std::size_t rows = av.numel() / cols;
  Tensor<T> out = av;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = &out.data[r * cols];
    T mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < cols; ++j) row[j] /= sum;
  }
  return tp.make("softmax", {a.node}, std::move(out), [a, rows, cols](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    const Tensor<T>& y = t.node(self).value;
    Tensor<T>& ga = t.grad_buf(a.node);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = &y.data[r * cols];
      const T* gr = &g.data[r * cols];
      T dot = T(0);
      for (int j = 0; j < cols; ++j) dot += gr[j] * yr[j];
      T* gar = &ga.data[r * cols];
      for (int j = 0; j < cols; ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> a, T eps = T(1e-5)) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.value(a);
  const int cols = av.shape.back();
  const std::size_t rows = av.numel() / cols;
  Tensor<T> out(av.shape);
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = &av.data[r * cols];
    T mean = T(0);
    for (int j = 0; j < cols; ++j) mean += x[j];
    mean /= T(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= T(cols);
    const T s = T(1) / std::sqrt(var + eps);
    inv_std[r] = s;
    T* o = &out.data[r * cols];
    for (int j = 0; j < cols; ++j) o[j] = (x[j] - mean) * s;
  }
  return tp.make("layer_norm", {a.node}, std::move(out),
                 [a, rows, cols, inv_std](Tape<T>& t, int self) {
                   const Tensor<T>& g = t.node(self).grad;
                   const Tensor<T>& y = t.node(self).value;
                   Tensor<T>& ga = t.grad_buf(a.node);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const T* yr = &y.data[r * cols];
                     const T* gr = &g.data[r * cols];
                     T gmean = T(0), gymean = T(0);
                     for (int j = 0; j < cols; ++j) {
                       gmean += gr[j];
                       gymean += gr[j] * yr[j];
                     }
                     gmean /= T(cols);
                     gymean /= T(cols);
                     T* gar = &ga.data[r * cols];
                     for (int j = 0; j < cols; ++j)
                       gar[j] += inv_std[r] * (gr[j] - gmean - yr[j] * gymean);
                   }
                 });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.value(a);
  T s = T(0);
  for (T v : av.data) s += v;
  return tp.make("sum", {a.node}, Tensor<T>({1}, {s}), [a](Tape<T>& t, int self) {
    const T g = t.node(self).grad.data[0];
    Tensor<T>& ga = t.grad_buf(a.node);
    for (auto& v : ga.data) v += g;
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.value(a);
  T s = T(0);
  for (T v : av.data) s += v;
  const T inv = T(1) / T(av.numel());
  return tp.make("mean", {a.node}, Tensor<T>({1}, {s * inv}), [a, inv](Tape<T>& t, int self) {
    const T g = t.node(self).grad.data[0] * inv;
    Tensor<T>& ga = t.grad_buf(a.node);
    for (auto& v : ga.data) v += g;
  });
}

// ---------------------------------------------------------------------------
// 2-D kernels. Rasters are (H, W, C) row-major; conv weights are (kh, kw, Cin, Cout).

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int stride, int pad) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>&xv = tp.value(x), &wv = tp.value(w);
  if (xv.rank() != 3 || wv.rank() != 4 || xv.shape[2] != wv.shape[2])
    detail::shape_fail(tp, "conv2d",
                       "input " + shape_str(xv.shape) + " weight " + shape_str(wv.shape));
  const int H = xv.shape[0], W = xv.shape[1], Ci = xv.shape[2];
  const int kh = wv.shape[0], kw = wv.shape[1], Co = wv.shape[3];
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  if (OH < 1 || OW < 1) detail::shape_fail(tp, "conv2d", "kernel larger than padded input");
  Tensor<T> out({OH, OW, Co});
  for (int oh = 0; oh < OH; ++oh)
    for (int ow = 0; ow < OW; ++ow) {
      T* op = &out.data[(std::size_t(oh) * OW + ow) * Co];
      for (int r = 0; r < kh; ++r) {
        const int ih = oh * stride + r - pad;
        if (ih < 0 || ih >= H) continue;
        for (int c = 0; c < kw; ++c) {
          const int iw = ow * stride + c - pad;
          if (iw < 0 || iw >= W) continue;
          const T* xp = &xv.data[(std::size_t(ih) * W + iw) * Ci];
          const T* wp = &wv.data[(std::size_t(r) * kw + c) * Ci * Co];
          for (int ci = 0; ci < Ci; ++ci) {
            const T xvv = xp[ci];
            const T* wrow = wp + std::size_t(ci) * Co;
            for (int co = 0; co < Co; ++co) op[co] += xvv * wrow[co];
          }
        }
      }
    }
  return tp.make(
      "conv2d", {x.node, w.node}, std::move(out),
      [x, w, H, W, Ci, kh, kw, Co, OH, OW, stride, pad](Tape<T>& t, int self) {
        const Tensor<T>& g = t.node(self).grad;
        const Tensor<T>&xv2 = t.node(x.node).value, &wv2 = t.node(w.node).value;
        Tensor<T>&gx = t.grad_buf(x.node), &gw = t.grad_buf(w.node);
        for (int oh = 0; oh < OH; ++oh)
          for (int ow = 0; ow < OW; ++ow) {
            const T* gp = &g.data[(std::size_t(oh) * OW + ow) * Co];
            for (int r = 0; r < kh; ++r) {
              const int ih = oh * stride + r - pad;
              if (ih < 0 || ih >= H) continue;
              for (int c = 0; c < kw; ++c) {
                const int iw = ow * stride + c - pad;
                if (iw < 0 || iw >= W) continue;
                const T* xp = &xv2.data[(std::size_t(ih) * W + iw) * Ci];
                T* gxp = &gx.data[(std::size_t(ih) * W + iw) * Ci];
                const std::size_t wbase = (std::size_t(r) * kw + c) * Ci * Co;
                for (int ci = 0; ci < Ci; ++ci) {
                  const T* wrow = &wv2.data[wbase + std::size_t(ci) * Co];
                  T* gwrow = &gw.data[wbase + std::size_t(ci) * Co];
                  T acc = T(0);
                  const T xvv = xp[ci];
                  for (int co = 0; co < Co; ++co) {
                    acc += gp[co] * wrow[co];
                    gwrow[co] += gp[co] * xvv;
                  }
                  gxp[ci] += acc;
                }
              }
            }
          }
      });
}

// 2x average pooling. Odd extents keep a truncated window at the border. When a
// validity mask is given, each output averages only the valid contributors (an
// all-invalid window yields 0). The mask is data, not a differentiable input.
template <typename T>
Var<T> avgpool2(Var<T> x, const Tensor<T>* mask = nullptr) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.value(x);
  if (xv.rank() != 3) detail::shape_fail(tp, "avgpool2", "expects (H,W,C), got " + shape_str(xv.shape));
  const int H = xv.shape[0], W = xv.shape[1], C = xv.shape[2];
  if (mask && (mask->shape[0] != H || mask->shape[1] != W))
    detail::shape_fail(tp, "avgpool2", "mask shape " + shape_str(mask->shape));
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  Tensor<T> out({OH, OW, C});
  std::vector<T> weight(std::size_t(H) * W, T(0)); // per-pixel 1/count of its window
  for (int oh = 0; oh < OH; ++oh)
    for (int ow = 0; ow < OW; ++ow) {
      int cnt = 0;
      for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj) {
          const int i = 2 * oh + di, j = 2 * ow + dj;
          if (i >= H || j >= W) continue;
          if (mask && mask->data[std::size_t(i) * W + j] <= T(0)) continue;
          ++cnt;
        }
      if (cnt == 0) continue;
      const T inv = T(1) / T(cnt);
      T* op = &out.data[(std::size_t(oh) * OW + ow) * C];
      for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj) {
          const int i = 2 * oh + di, j = 2 * ow + dj;
          if (i >= H || j >= W) continue;
          if (mask && mask->data[std::size_t(i) * W + j] <= T(0)) continue;
          weight[std::size_t(i) * W + j] = inv;
          const T* xp = &xv.data[(std::size_t(i) * W + j) * C];
          for (int c = 0; c < C; ++c) op[c] += xp[c] * inv;
        }
    }
  return tp.make("avgpool2", {x.node}, std::move(out),
                 [x, H, W, C, OH, OW, weight](Tape<T>& t, int self) {
                   const Tensor<T>& g = t.node(self).grad;
                   Tensor<T>& gx = t.grad_buf(x.node);
                   for (int i = 0; i < H; ++i)
                     for (int j = 0; j < W; ++j) {
                       const T wgt = weight[std::size_t(i) * W + j];
                       if (wgt == T(0)) continue;
                       const T* gp = &g.data[(std::size_t(i / 2) * OW + (j / 2)) * C];
                       T* gxp = &gx.data[(std::size_t(i) * W + j) * C];
                       for (int c = 0; c < C; ++c) gxp[c] += gp[c] * wgt;
                     }
                 });
}

// RAFT-style convex upsampling. mask_logits is (h, w, f*f*9): per coarse cell and
// per fine sub-position, 9 logits over the 3x3 coarse neighborhood (replicate
// padding at borders). Each fine value is the softmax-weighted combination of
// that neighborhood, so outputs stay inside the neighborhood's componentwise hull.
template <typename T>
Var<T> convex_upsample(Var<T> coarse, Var<T> mask_logits, int f) {
  Tape<T>& tp = *coarse.tape;
  const Tensor<T>&cv = tp.value(coarse), &mv = tp.value(mask_logits);
  if (f < 2) detail::shape_fail(tp, "convex_upsample", "factor must be >= 2");
  if (cv.rank() != 3 || mv.rank() != 3 || mv.shape[0] != cv.shape[0] ||
      mv.shape[1] != cv.shape[1] || mv.shape[2] != f * f * 9)
    detail::shape_fail(tp, "convex_upsample", "coarse " + shape_str(cv.shape) + " mask " +
                                                  shape_str(mv.shape) + " factor " + std::to_string(f));
  const int h = cv.shape[0], w = cv.shape[1], C = cv.shape[2];
  const int OH = h * f, OW = w * f;

  auto softmax9 = [](const T* logits, T* wgt) {
    T mx = logits[0];
    for (int k = 1; k < 9; ++k) mx = std::max(mx, logits[k]);
    T sum = T(0);
    for (int k = 0; k < 9; ++k) {
      wgt[k] = std::exp(logits[k] - mx);
      sum += wgt[k];
    }
    for (int k = 0; k < 9; ++k) wgt[k] /= sum;
  };

  Tensor<T> out({OH, OW, C});
  T wgt[9];
  for (int fi = 0; fi < OH; ++fi)
    for (int fj = 0; fj < OW; ++fj) {
      const int i = fi / f, j = fj / f;
      const int sub = (fi % f) * f + (fj % f);
      softmax9(&mv.data[(std::size_t(i) * w + j) * (f * f * 9) + sub * 9], wgt);
      T* op = &out.data[(std::size_t(fi) * OW + fj) * C];
      for (int k = 0; k < 9; ++k) {
        const int ni = std::clamp(i + k / 3 - 1, 0, h - 1);
        const int nj = std::clamp(j + k % 3 - 1, 0, w - 1);
        const T* cp = &cv.data[(std::size_t(ni) * w + nj) * C];
        for (int c = 0; c < C; ++c) op[c] += wgt[k] * cp[c];
      }
    }
  return tp.make(
      "convex_upsample", {coarse.node, mask_logits.node}, std::move(out),
      [coarse, mask_logits, h, w, C, f, OH, OW, softmax9](Tape<T>& t, int self) {
        const Tensor<T>& g = t.node(self).grad;
        const Tensor<T>&cv2 = t.node(coarse.node).value, &mv2 = t.node(mask_logits.node).value;
        Tensor<T>&gc = t.grad_buf(coarse.node), &gm = t.grad_buf(mask_logits.node);
        T wgt[9], a[9];
        for (int fi = 0; fi < OH; ++fi)
          for (int fj = 0; fj < OW; ++fj) {
            const int i = fi / f, j = fj / f;
            const int sub = (fi % f) * f + (fj % f);
            const std::size_t mbase = (std::size_t(i) * w + j) * (f * f * 9) + sub * 9;
            softmax9(&mv2.data[mbase], wgt);
            const T* gp = &g.data[(std::size_t(fi) * OW + fj) * C];
            T b = T(0);
            for (int k = 0; k < 9; ++k) {
              const int ni = std::clamp(i + k / 3 - 1, 0, h - 1);
              const int nj = std::clamp(j + k % 3 - 1, 0, w - 1);
              const T* cp = &cv2.data[(std::size_t(ni) * w + nj) * C];
              T* gcp = &gc.data[(std::size_t(ni) * w + nj) * C];
              T acc = T(0);
              for (int c = 0; c < C; ++c) {
                acc += gp[c] * cp[c];
                gcp[c] += gp[c] * wgt[k];
              }
              a[k] = acc;
              b += wgt[k] * acc;
            }
            for (int k = 0; k < 9; ++k) gm.data[mbase + k] += wgt[k] * (a[k] - b);
          }
      });
}

// Raster (H,W,C) -> tokens (N, P*P*C) in row-major patch order.
template <typename T>
Var<T> patchify(Var<T> x, int P) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.value(x);
  if (xv.rank() != 3 || xv.shape[0] % P != 0 || xv.shape[1] % P != 0)
    detail::shape_fail(tp, "patchify", "raster " + shape_str(xv.shape) + " not a multiple of P=" +
                                           std::to_string(P));
  const int H = xv.shape[0], W = xv.shape[1], C = xv.shape[2];
  const int Hp = H / P, Wp = W / P, N = Hp * Wp, D = P * P * C;
  Tensor<T> out({N, D});
  for (int pi = 0; pi < Hp; ++pi)
    for (int pj = 0; pj < Wp; ++pj)
      for (int di = 0; di < P; ++di)
        for (int dj = 0; dj < P; ++dj) {
          const T* xp = &xv.data[(std::size_t(pi * P + di) * W + pj * P + dj) * C];
          T* op = &out.data[std::size_t(pi * Wp + pj) * D + (std::size_t(di) * P + dj) * C];
          for (int c = 0; c < C; ++c) op[c] = xp[c];
        }
  return tp.make("patchify", {x.node}, std::move(out), [x, W, C, Hp, Wp, P, D](Tape<T>& t, int self) {
    const Tensor<T>& g = t.node(self).grad;
    Tensor<T>& gx = t.grad_buf(x.node);
    for (int pi = 0; pi < Hp; ++pi)
      for (int pj = 0; pj < Wp; ++pj)
        for (int di = 0; di < P; ++di)
          for (int dj = 0; dj < P; ++dj) {
            T* gxp = &gx.data[(std::size_t(pi * P + di) * W + pj * P + dj) * C];
            const T* gp = &g.data[std::size_t(pi * Wp + pj) * D + (std::size_t(di) * P + dj) * C];
            for (int c = 0; c < C; ++c) gxp[c] += gp[c];
          }
  });
}

// Tokens (N, P*P*C) -> raster (Hp*P, Wp*P, C); inverse of patchify.
template <typename T>
Var<T> unpatchify(Var<T> tokens, int Hp, int Wp, int P, int C) {
  Tape<T>& tp = *tokens.tape;
  const Tensor<T>& tv = tp.value(tokens);
  if (tv.rank() != 2 || tv.shape[0] != Hp * Wp || tv.shape[1] != P * P * C)
    detail::shape_fail(tp, "unpatchify",
                       "tokens " + shape_str(tv.shape) + " vs grid " + std::to_string(Hp) + "x" +
                           std::to_string(Wp) + " P=" + std::to_string(P));
  const int W = Wp * P, D = P * P * C;
  Tensor<T> out({Hp * P, W, C});
  for (int pi = 0; pi < Hp; ++pi)
    for (int pj = 0; pj < Wp; ++pj)
      for (int di = 0; di < P; ++di)
        for (int dj = 0; dj < P; ++dj) {
          const T* ip = &tv.data[std::size_t(pi * Wp + pj) * D + (std::size_t(di) * P + dj) * C];
          T* op = &out.data[(std::size_t(pi * P + di) * W + pj * P + dj) * C];
          for (int c = 0; c < C; ++c) op[c] = ip[c];
        }
  return tp.make("unpatchify", {tokens.node}, std::move(out),
                 [tokens, Hp, Wp, P, C, W, D](Tape<T>& t, int self) {
                   const Tensor<T>& g = t.node(self).grad;
                   Tensor<T>& gt = t.grad_buf(tokens.node);
                   for (int pi = 0; pi < Hp; ++pi)
                     for (int pj = 0; pj < Wp; ++pj)
                       for (int di = 0; di < P; ++di)
                         for (int dj = 0; dj < P; ++dj) {
                           T* ip = &gt.data[std::size_t(pi * Wp + pj) * D +
                                            (std::size_t(di) * P + dj) * C];
                           const T* gp = &g.data[(std::size_t(pi * P + di) * W + pj * P + dj) * C];
                           for (int c = 0; c < C; ++c) ip[c] += gp[c];
                         }
                 });
}

// x @ w + b with b broadcast over rows.
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add(matmul(x, w), b);
}

} // namespace delta
