#include <cstring>

#include "gtest/gtest.h"

#include "delta/graph.hpp"
#include "gradsuite.hpp"
#include "testutil.hpp"

using delta::Shape;
using delta::Tape;
using delta::Tensor;
using delta::Var;

TEST(Forward, SoftmaxSymmetry) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 2}, {0.0, 0.0}));
  auto y = delta::softmax(x);
  EXPECT_DOUBLE_EQ(tape.value(y).data[0], 0.5);
  EXPECT_DOUBLE_EQ(tape.value(y).data[1], 0.5);
  EXPECT_EQ(&tape.forward(), &tape.value(y));
}

TEST(Forward, MatmulIdentity) {
  Tape<double> tape;
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  delta::Rng rng(3);
  auto xt = testutil::random_tensor({3, 4}, rng);
  auto y = delta::matmul(tape.constant(eye), tape.constant(xt));
  for (std::size_t i = 0; i < xt.numel(); ++i) EXPECT_DOUBLE_EQ(tape.value(y).data[i], xt.data[i]);
}

TEST(Forward, LayerNormHandValues) {
  Tape<double> tape;
  auto y = delta::layer_norm(tape.constant(Tensor<double>({1, 3}, {1.0, 2.0, 3.0})));
  const auto& v = tape.value(y).data;
  // direct evaluation: mu=2, var=2/3, s=1/sqrt(var+1e-5)
  const double s = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(v[0], -s, 1e-9);
  EXPECT_NEAR(v[1], 0.0, 1e-9);
  EXPECT_NEAR(v[2], s, 1e-9);
  const double mean = (v[0] + v[1] + v[2]) / 3.0;
  const double var = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / 3.0 - mean * mean;
  EXPECT_LT(std::abs(mean), 1e-5);
  EXPECT_LT(std::abs(var - 1.0), 1e-4);
}

TEST(Forward, ShapeMismatchNamesNode) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({4, 2}));
  try {
    delta::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const delta::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(2,3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(4,2)"), std::string::npos);
  }
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  delta::Rng rng(1);
  auto p = testutil::random_tensor({2, 2}, rng);
  auto v = tape.constant(p);
  auto loss = delta::sum_all(v);
  tape.backward(loss);
  for (double g : tape.grad(v).data) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
  Tape<double> tape;
  auto v = tape.constant(Tensor<double>({2}, {1.0, -2.0}));
  auto loss = delta::sum_all(delta::mul(v, v));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(v).data[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(v).data[1], -4.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tape<double> tape;
  auto v = tape.constant(Tensor<double>({2, 2}));
  auto y = delta::add_scalar(v, 1.0);
  EXPECT_THROW(tape.backward(y), delta::ShapeError);
}

TEST(Backward, ParamGradAccumulates) {
  delta::ParamStore<double> store;
  store.create("w", Tensor<double>({2}, {3.0, -1.0}));
  Tape<double> tape;
  auto w = tape.param(store, "w");
  auto loss = delta::sum_all(delta::mul(w, w));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(store.at("w").grad.data[0], 6.0);
  EXPECT_DOUBLE_EQ(store.at("w").grad.data[1], -2.0);
  // second backward on a fresh tape accumulates
  Tape<double> tape2;
  auto w2 = tape2.param(store, "w");
  tape2.backward(delta::sum_all(w2));
  EXPECT_DOUBLE_EQ(store.at("w").grad.data[0], 7.0);
}

TEST(Backward, Determinism) {
  auto run = [](std::vector<double>* out_grad) {
    delta::Rng rng(99);
    auto x = testutil::random_tensor({4, 4}, rng);
    auto w = testutil::random_tensor({4, 4}, rng);
    Tape<double> tape;
    auto xv = tape.constant(x);
    auto wv = tape.constant(w);
    auto y = delta::gelu(delta::matmul(delta::softmax(xv), wv));
    auto loss = delta::mean_all(delta::layer_norm(y));
    tape.backward(loss);
    *out_grad = tape.grad(wv).data;
    return tape.value(loss).data[0];
  };
  std::vector<double> g1, g2;
  const double l1 = run(&g1);
  const double l2 = run(&g2);
  EXPECT_EQ(std::memcmp(&l1, &l2, sizeof(double)), 0);
  ASSERT_EQ(g1.size(), g2.size());
  EXPECT_EQ(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)), 0);
}

TEST(Invariants, SoftmaxRowsSumToOne) {
  delta::Rng rng(7);
  for (int s = 0; s < 10; ++s) {
    auto x = testutil::random_tensor({5, 7}, rng, -5.0, 5.0);
    Tape<double> tape;
    auto y = delta::softmax(tape.constant(x));
    const auto& v = tape.value(y);
    for (int r = 0; r < 5; ++r) {
      double sum = 0;
      for (int c = 0; c < 7; ++c) {
        EXPECT_GT(v.at(r, c), 0.0);
        EXPECT_LT(v.at(r, c), 1.0);
        sum += v.at(r, c);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Invariants, LayerNormMoments) {
  delta::Rng rng(8);
  for (int s = 0; s < 10; ++s) {
    auto x = testutil::random_tensor({4, 6}, rng, -3.0, 3.0);
    Tape<double> tape;
    auto y = delta::layer_norm(tape.constant(x));
    const auto& v = tape.value(y);
    for (int r = 0; r < 4; ++r) {
      double mean = 0, sq = 0;
      for (int c = 0; c < 6; ++c) {
        mean += v.at(r, c);
        sq += v.at(r, c) * v.at(r, c);
      }
      mean /= 6;
      EXPECT_LT(std::abs(mean), 1e-5);
      EXPECT_LT(std::abs(sq / 6 - mean * mean - 1.0), 1e-4);
    }
  }
}

TEST(GradCheck, AllKernels) {
  std::string worst_name;
  const double err = gradsuite::run_kernel_suite(10, &worst_name);
  EXPECT_LT(err, 1e-4) << "worst kernel: " << worst_name;
}
