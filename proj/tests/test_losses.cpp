#include "gtest/gtest.h"

#include "delta/losses.hpp"
#include "testutil.hpp"

using delta::Tape;
using delta::Tensor;
using delta::Var;

namespace {

Tensor<double> full_mask(int h, int w) { return Tensor<double>::full({h, w, 1}, 1.0); }

double msg_value(const Tensor<double>& pred, const Tensor<double>& gt, const Tensor<double>& mask,
                 int scales) {
  Tape<double> tape;
  auto loss = delta::msg_loss(tape, tape.constant(pred), gt, mask, scales);
  return tape.value(loss).data[0];
}

// scalar-loop msg oracle (dense mask only): pools by plain 2x2 averaging and
// accumulates |dx|+|dy| means over interior sites
double msg_oracle_dense(Tensor<double> p, Tensor<double> g, int scales) {
  double total = 0;
  for (int s = 0; s < scales; ++s) {
    if (s > 0) {
      auto pool = [](const Tensor<double>& t) {
        const int H = t.shape[0], W = t.shape[1];
        const int OH = (H + 1) / 2, OW = (W + 1) / 2;
        Tensor<double> o({OH, OW, 1});
        for (int i = 0; i < OH; ++i)
          for (int j = 0; j < OW; ++j) {
            double acc = 0;
            int n = 0;
            for (int di = 0; di < 2; ++di)
              for (int dj = 0; dj < 2; ++dj)
                if (2 * i + di < H && 2 * j + dj < W) {
                  acc += t.at(2 * i + di, 2 * j + dj, 0);
                  ++n;
                }
            o.at(i, j, 0) = acc / n;
          }
        return o;
      };
      p = pool(p);
      g = pool(g);
    }
    const int H = p.shape[0], W = p.shape[1];
    if (H < 2 || W < 2) continue;
    double acc = 0;
    int n = 0;
    for (int i = 0; i + 1 < H; ++i)
      for (int j = 0; j + 1 < W; ++j) {
        const double e = p.at(i, j, 0) - g.at(i, j, 0);
        const double ex = p.at(i, j + 1, 0) - g.at(i, j + 1, 0) - e;
        const double ey = p.at(i + 1, j, 0) - g.at(i + 1, j, 0) - e;
        acc += std::abs(ex) + std::abs(ey);
        ++n;
      }
    if (n) total += acc / n;
  }
  return total;
}

} // namespace

TEST(L1Loss, ExactAndOffsetCases) {
  delta::Rng rng(1);
  auto gt = testutil::random_tensor({4, 4, 1}, rng, 0.1, 0.9);
  auto mask = full_mask(4, 4);
  Tape<double> tape;
  auto pred = tape.constant(gt);
  EXPECT_DOUBLE_EQ(tape.value(delta::l1_loss(tape, pred, gt, mask)).data[0], 0.0);

  auto shifted = gt;
  for (auto& v : shifted.data) v += 0.1;
  auto pred2 = tape.constant(shifted);
  EXPECT_NEAR(tape.value(delta::l1_loss(tape, pred2, gt, mask)).data[0], 0.1, 1e-12);
}

TEST(L1Loss, HandComputedPair) {
  Tensor<double> pred({1, 2, 1}, {0.2, 0.8});
  Tensor<double> gt({1, 2, 1}, {0.0, 1.0});
  // mask marks both pixels valid even though gt==0 at the first; supply explicitly
  Tensor<double> mask({1, 2, 1}, {1.0, 1.0});
  Tape<double> tape;
  EXPECT_NEAR(tape.value(delta::l1_loss(tape, tape.constant(pred), gt, mask)).data[0], 0.2, 1e-12);
}

TEST(L1Loss, EmptyMaskRejected) {
  Tensor<double> gt({2, 2, 1});
  Tape<double> tape;
  auto pred = tape.constant(gt);
  EXPECT_THROW(delta::l1_loss(tape, pred, gt, delta::valid_mask(gt)), delta::DataError);
}

TEST(L1Loss, MaskedPixelsIgnored) {
  Tensor<double> pred({1, 2, 1}, {0.5, 0.9});
  Tensor<double> gt({1, 2, 1}, {0.5, 0.0});
  auto mask = delta::valid_mask(gt); // only first pixel valid
  Tape<double> tape;
  EXPECT_DOUBLE_EQ(tape.value(delta::l1_loss(tape, tape.constant(pred), gt, mask)).data[0], 0.0);
}

TEST(MsgLoss, ZeroForIdenticalAndConstantOffset) {
  delta::Rng rng(2);
  auto gt = testutil::random_tensor({16, 16, 1}, rng, 0.1, 0.9);
  EXPECT_NEAR(msg_value(gt, gt, full_mask(16, 16), 5), 0.0, 1e-12);
  for (int trial = 0; trial < 10; ++trial) {
    auto off = gt;
    const double c = rng.uniform(-0.5, 0.5);
    for (auto& v : off.data) v += c;
    EXPECT_LT(msg_value(off, gt, full_mask(16, 16), 5), 1e-7);
  }
}

TEST(MsgLoss, TwoScaleHandComputation) {
  // pred has a single 1 at (1,1); gt = 0; full mask
  Tensor<double> pred({4, 4, 1});
  pred.at(1, 1, 0) = 1.0;
  Tensor<double> gt({4, 4, 1});
  // scale 0: sites (1,0):1, (1,1):2, (0,1):1 of 9 -> 4/9
  // scale 1: pooled e = [[0.25,0],[0,0]], one site: |dx|+|dy| = 0.5
  const double expected = 4.0 / 9.0 + 0.5;
  EXPECT_NEAR(msg_value(pred, gt, full_mask(4, 4), 2), expected, 1e-6);
  EXPECT_NEAR(msg_oracle_dense(pred, gt, 2), expected, 1e-12);
}

TEST(MsgLoss, MatchesScalarOracleOnRandomRasters) {
  delta::Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    auto pred = testutil::random_tensor({17, 19, 1}, rng, 0.0, 1.0);
    auto gt = testutil::random_tensor({17, 19, 1}, rng, 0.0, 1.0);
    const double got = msg_value(pred, gt, full_mask(17, 19), 5);
    const double want = msg_oracle_dense(pred, gt, 5);
    EXPECT_NEAR(got, want, 1e-9);
  }
}

TEST(MsgLoss, TooSmallRasterRejected) {
  Tensor<double> t({15, 20, 1});
  Tape<double> tape;
  auto pred = tape.constant(t);
  EXPECT_THROW(delta::msg_loss(tape, pred, t, full_mask(15, 20), 5), delta::UsageError);
}

TEST(MsgLoss, MaskAwarePoolingSkipsInvalid) {
  // a hole in the mask removes sites touching it but still pools validly
  delta::Rng rng(4);
  auto gt = testutil::random_tensor({16, 16, 1}, rng, 0.2, 0.9);
  gt.at(3, 3, 0) = 0.0;
  auto mask = delta::valid_mask(gt);
  auto pred = gt;
  for (auto& v : pred.data) v += 0.25; // constant offset must still vanish
  EXPECT_LT(msg_value(pred, gt, mask, 5), 1e-7);
}

TEST(SequenceLoss, SingleStepAndAdditivity) {
  delta::Rng rng(5);
  std::vector<Tensor<double>> gts, masks;
  std::vector<Tensor<double>> preds_t;
  for (int t = 0; t < 3; ++t) {
    gts.push_back(testutil::random_tensor({16, 16, 1}, rng, 0.1, 0.9));
    masks.push_back(full_mask(16, 16));
    preds_t.push_back(testutil::random_tensor({16, 16, 1}, rng, 0.0, 1.0));
  }

  auto total_of = [&](std::size_t begin, std::size_t end) {
    Tape<double> tape;
    std::vector<Var<double>> preds;
    std::vector<Tensor<double>> g(gts.begin() + begin, gts.begin() + end);
    std::vector<Tensor<double>> m(masks.begin() + begin, masks.begin() + end);
    for (std::size_t t = begin; t < end; ++t) preds.push_back(tape.constant(preds_t[t]));
    return delta::sequence_loss(tape, preds, g, m);
  };

  auto r1 = total_of(0, 1);
  Tape<double> tape;
  auto lone_l1 = delta::l1_loss(tape, tape.constant(preds_t[0]), gts[0], masks[0]);
  auto lone_msg = delta::msg_loss(tape, tape.constant(preds_t[0]), gts[0], masks[0]);
  EXPECT_NEAR(r1.total_value, tape.value(lone_l1).data[0] + tape.value(lone_msg).data[0], 1e-12);

  auto rall = total_of(0, 3);
  auto ra = total_of(0, 2);
  auto rb = total_of(2, 3);
  EXPECT_NEAR(rall.total_value, ra.total_value + rb.total_value, 1e-9);
  ASSERT_EQ(rall.l1_steps.size(), 3u);
  double sum = 0;
  for (std::size_t t = 0; t < 3; ++t) sum += rall.l1_steps[t] + rall.msg_steps[t];
  EXPECT_NEAR(rall.total_value, sum, 1e-9);
}

TEST(SequenceLoss, IdenticalPredGtIsZero) {
  delta::Rng rng(6);
  Tape<double> tape;
  std::vector<Var<double>> preds;
  std::vector<Tensor<double>> gts, masks;
  for (int t = 0; t < 2; ++t) {
    gts.push_back(testutil::random_tensor({16, 16, 1}, rng, 0.1, 0.9));
    masks.push_back(full_mask(16, 16));
    preds.push_back(tape.constant(gts.back()));
  }
  EXPECT_NEAR(delta::sequence_loss(tape, preds, gts, masks).total_value, 0.0, 1e-12);
}

TEST(SequenceLoss, LengthMismatchRejected) {
  Tape<double> tape;
  std::vector<Var<double>> preds = {tape.constant(Tensor<double>({16, 16, 1}))};
  std::vector<Tensor<double>> gts;
  std::vector<Tensor<double>> masks = {full_mask(16, 16)};
  EXPECT_THROW(delta::sequence_loss(tape, preds, gts, masks), delta::UsageError);
}

TEST(LossGradients, PassFiniteDifferencesAwayFromKink) {
  delta::Rng rng(7);
  std::string worst;
  double max_err = 0;
  for (int trial = 0; trial < 5; ++trial) {
    auto gt = testutil::random_tensor({16, 16, 1}, rng, 0.2, 0.8);
    auto pred = gt;
    // displace every pixel by a signed margin so |e| and its differences stay off 0
    for (std::size_t i = 0; i < pred.numel(); ++i)
      pred.data[i] += (i % 2 ? 1 : -1) * rng.uniform(0.02, 0.08) + (i % 3 ? 0.01 : -0.01);
    auto mask = full_mask(16, 16);
    max_err = std::max(
        max_err, testutil::gradcheck_inputs(
                     {&pred},
                     [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                       return delta::add(delta::l1_loss(t, v[0], gt, mask),
                                         delta::msg_loss(t, v[0], gt, mask));
                     },
                     rng, 1e-6, 40, &worst));
  }
  EXPECT_LT(max_err, 1e-4) << worst;
}
