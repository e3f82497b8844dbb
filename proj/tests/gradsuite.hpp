#pragma once

// Finite-difference coverage for every differentiable kernel, shared between
// the unit tests and the acceptance suite. All checks run at 64-bit precision
// with extents <= 4 and report the worst relative error seen.

#include <functional>
#include <string>
#include <vector>

#include "delta/graph.hpp"
#include "testutil.hpp"

namespace gradsuite {

using delta::Tape;
using delta::Tensor;
using delta::Var;
using D = double;

struct KernelCheck {
  std::string name;
  // Returns max relative error for one seeded instance.
  std::function<double(delta::Rng&)> run;
};

// Gradchecks sum(op(inputs) * W) for a fixed random W, so output gradients are
// non-uniform but identical across the analytic and finite-difference passes.
inline double check_op(
    std::vector<Tensor<D>*> inputs,
    const std::function<Var<D>(Tape<D>&, const std::vector<Var<D>>&)>& op, delta::Rng& rng) {
  Tensor<D> w;
  {
    Tape<D> probe;
    std::vector<Var<D>> vs;
    for (auto* in : inputs) vs.push_back(probe.constant(*in));
    w = Tensor<D>(probe.value(op(probe, vs)).shape);
    for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
  }
  return testutil::gradcheck_inputs(
      inputs,
      [&](Tape<D>& t, const std::vector<Var<D>>& v) {
        return delta::sum_all(delta::mul(op(t, v), t.constant(w)));
      },
      rng);
}

inline std::vector<KernelCheck> kernel_checks() {
  using delta::Shape;
  std::vector<KernelCheck> checks;
  auto add_check = [&](std::string name, std::function<double(delta::Rng&)> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  auto binary = [&](Shape sa, Shape sb, Var<D> (*op)(Var<D>, Var<D>)) {
    return [=](delta::Rng& rng) {
      auto a = testutil::random_tensor(sa, rng);
      auto b = testutil::random_tensor(sb, rng);
      return check_op({&a, &b},
                      [&](Tape<D>&, const std::vector<Var<D>>& v) { return op(v[0], v[1]); }, rng);
    };
  };

  add_check("add", binary({3, 4}, {3, 4}, &delta::add<D>));
  add_check("add_broadcast", binary({3, 4}, {4}, &delta::add<D>));
  add_check("sub", binary({2, 3, 2}, {2, 3, 2}, &delta::sub<D>));
  add_check("sub_broadcast", binary({3, 2, 4}, {2, 4}, &delta::sub<D>));
  add_check("mul", binary({4, 3}, {4, 3}, &delta::mul<D>));
  add_check("mul_broadcast", binary({2, 4, 3}, {3}, &delta::mul<D>));
  add_check("matmul", binary({3, 4}, {4, 2}, &delta::matmul<D>));

  add_check("maximum", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({4, 3}, rng);
    auto b = a;
    // keep a margin from the tie so the subgradient choice is irrelevant
    for (auto& v : b.data) v += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.15, 0.9);
    return check_op(
        {&a, &b},
        [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::maximum(v[0], v[1]); }, rng);
  });

  auto unary = [&](Var<D> (*op)(Var<D>), double lo, double hi, bool sign_margin = false) {
    return [=](delta::Rng& rng) {
      auto a = testutil::random_tensor({3, 4}, rng, lo, hi);
      if (sign_margin)
        for (auto& v : a.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
      return check_op({&a}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return op(v[0]); }, rng);
    };
  };
  add_check("sigmoid", unary(&delta::sigmoid<D>, -2.0, 2.0));
  add_check("tanh", unary(&delta::tanh_op<D>, -2.0, 2.0));
  add_check("gelu", unary(&delta::gelu<D>, -2.0, 2.0));
  add_check("abs", unary(&delta::abs_op<D>, -1.0, 1.0, true));
  add_check("sqrt", unary(&delta::sqrt_op<D>, 0.2, 1.8));
  add_check("log", unary(&delta::log_op<D>, 0.2, 1.8));
  add_check("softmax", unary(&delta::softmax<D>, -2.0, 2.0));
  add_check("layer_norm", unary([](Var<D> v) { return delta::layer_norm(v); }, -2.0, 2.0));
  add_check("transpose", unary(&delta::transpose<D>, -1.0, 1.0));

  add_check("add_scalar", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({2, 3}, rng);
    const double c = rng.uniform(-1.0, 1.0);
    return check_op(
        {&a}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::add_scalar(v[0], c); },
        rng);
  });
  add_check("mul_scalar", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({2, 3}, rng);
    const double c = rng.uniform(-2.0, 2.0);
    return check_op(
        {&a}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::mul_scalar(v[0], c); },
        rng);
  });

  add_check("reshape", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({2, 3, 2}, rng);
    return check_op(
        {&a}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::reshape(v[0], {3, 4}); },
        rng);
  });
  add_check("concat", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({2, 3}, rng);
    auto b = testutil::random_tensor({2, 2}, rng);
    auto c = testutil::random_tensor({2, 4}, rng);
    return check_op(
        {&a, &b, &c},
        [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::concat<D>({v[0], v[1], v[2]}, 1); },
        rng);
  });
  add_check("slice", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({3, 4, 2}, rng);
    return check_op(
        {&a}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::slice(v[0], 1, 1, 2); },
        rng);
  });

  add_check("sum", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({3, 3}, rng);
    return testutil::gradcheck_inputs(
        {&a}, [&](Tape<D>& t, const std::vector<Var<D>>& v) { return delta::sum_all(v[0]); }, rng);
  });
  add_check("mean", [](delta::Rng& rng) {
    auto a = testutil::random_tensor({4, 2}, rng);
    return testutil::gradcheck_inputs(
        {&a}, [&](Tape<D>& t, const std::vector<Var<D>>& v) { return delta::mean_all(v[0]); }, rng);
  });

  auto conv = [&](Shape xs, Shape ws, int stride, int pad) {
    return [=](delta::Rng& rng) {
      auto x = testutil::random_tensor(xs, rng);
      auto w = testutil::random_tensor(ws, rng);
      return check_op(
          {&x, &w},
          [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::conv2d(v[0], v[1], stride, pad); },
          rng);
    };
  };
  add_check("conv2d_s1", conv({4, 4, 2}, {3, 3, 2, 3}, 1, 1));
  add_check("conv2d_s2", conv({4, 4, 2}, {3, 3, 2, 2}, 2, 1));
  add_check("conv2d_s3", conv({3, 3, 2}, {3, 3, 2, 2}, 3, 0));
  add_check("conv2d_1x1", conv({3, 4, 3}, {1, 1, 3, 2}, 1, 0));

  add_check("avgpool2", [](delta::Rng& rng) {
    auto x = testutil::random_tensor({4, 4, 2}, rng);
    return check_op(
        {&x}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::avgpool2(v[0]); }, rng);
  });
  add_check("avgpool2_masked_odd", [](delta::Rng& rng) {
    auto x = testutil::random_tensor({3, 3, 2}, rng);
    Tensor<D> mask({3, 3, 1});
    int valid = 0;
    for (auto& v : mask.data) {
      v = rng.uniform() < 0.7 ? 1.0 : 0.0;
      valid += v > 0;
    }
    if (valid == 0) mask.data[4] = 1.0;
    return check_op(
        {&x}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::avgpool2(v[0], &mask); },
        rng);
  });

  add_check("convex_upsample", [](delta::Rng& rng) {
    auto coarse = testutil::random_tensor({2, 3, 2}, rng);
    auto mask = testutil::random_tensor({2, 3, 2 * 2 * 9}, rng);
    return check_op(
        {&coarse, &mask},
        [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::convex_upsample(v[0], v[1], 2); },
        rng);
  });

  add_check("patchify", [](delta::Rng& rng) {
    auto x = testutil::random_tensor({4, 4, 2}, rng);
    return check_op(
        {&x}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::patchify(v[0], 2); }, rng);
  });
  add_check("unpatchify", [](delta::Rng& rng) {
    auto x = testutil::random_tensor({4, 8}, rng); // 2x2 grid of 2x2 patches, C=2
    return check_op(
        {&x}, [&](Tape<D>&, const std::vector<Var<D>>& v) { return delta::unpatchify(v[0], 2, 2, 2, 2); },
        rng);
  });

  return checks;
}

// Runs the whole kernel suite, returns the worst error across kernels/seeds.
inline double run_kernel_suite(int seeds, std::string* worst_name = nullptr) {
  double worst = 0.0;
  for (const auto& check : kernel_checks()) {
    for (int s = 0; s < seeds; ++s) {
      delta::Rng rng(0x5eed0000 + 977 * s + std::hash<std::string>{}(check.name));
      const double err = check.run(rng);
      if (err > worst) {
        worst = err;
        if (worst_name) *worst_name = check.name + " seed " + std::to_string(s);
      }
    }
  }
  return worst;
}

} // namespace gradsuite
