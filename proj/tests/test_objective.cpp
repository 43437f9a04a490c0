#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "vipt/grad_check.hpp"
#include "vipt/objective.hpp"
#include "vipt/ops.hpp"

using namespace vipt;
using vipt::test::random_tensor;

namespace {

// Direct transcription of the penalty-reduced focal loss, element by element.
double focal_oracle(const Tensor& p, const Tensor& y) {
  double pos = 0, neg = 0;
  std::size_t npos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::min(std::max(p[i], 1e-6), 1 - 1e-6);
    if (y[i] == 1.0) {
      pos += std::pow(1 - q, 2) * std::log(q);
      ++npos;
    } else {
      neg += std::pow(1 - y[i], 4) * std::pow(q, 2) * std::log(1 - q);
    }
  }
  return -(pos + neg) / std::max<std::size_t>(npos, 1);
}

}  // namespace

TEST(FocalLoss, MatchesOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor p = random_tensor({1, 6, 6}, rng, 0.001, 0.999);
    const GtTarget gt = make_target({0.1 + std::fmod(0.13 * trial, 0.8), 0.5, 0.3, 0.2}, 6);
    EXPECT_NEAR(focal_loss(p, gt.cls_target), focal_oracle(p, gt.cls_target), 1e-12);
  }
}

TEST(FocalLoss, PerfectPredictionIsNearZeroAndGradientChecks) {
  const GtTarget gt = make_target({0.5, 0.5, 0.3, 0.3}, 8);
  Tensor p(gt.cls_target.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = gt.cls_target[i] == 1.0 ? 1.0 : 0.0;
  EXPECT_LT(focal_loss(p, gt.cls_target), 1e-10);
  std::mt19937_64 rng(2);
  const Tensor q = random_tensor({1, 8, 8}, rng, 0.05, 0.95);
  const auto rep = grad_check([&](Tape&, const Var& v) { return ops::focal_loss(v, gt.cls_target); }, q);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(FocalLoss, Errors) {
  EXPECT_THROW(focal_loss(Tensor({1, 4, 4}), Tensor({1, 3, 3})), DimensionError);
  EXPECT_THROW(focal_loss(Tensor({1, 2, 2}), Tensor::full({1, 2, 2}, 1.5)), std::invalid_argument);
}

TEST(GiouLoss, ClosedFormCases) {
  // identical
  EXPECT_NEAR(giou_loss(std::array<double, 4>{0, 0, 2, 2}, {0, 0, 2, 2}), 0.0, 1e-15);
  // half overlap: IoU 2/6, hull equals union
  EXPECT_NEAR(giou_loss(std::array<double, 4>{0, 0, 2, 2}, {1, 0, 3, 2}), 1 - 1.0 / 3, 1e-15);
  // disjoint: IoU 0, hull 3, union 2 -> GIoU = -1/3
  EXPECT_NEAR(giou_loss(std::array<double, 4>{0, 0, 1, 1}, {2, 0, 3, 1}), 1 + 1.0 / 3, 1e-15);
  // nested: inner 1x1 inside 2x2
  EXPECT_NEAR(giou_loss(std::array<double, 4>{0, 0, 2, 2}, {0.5, 0.5, 1.5, 1.5}), 0.75, 1e-15);
  EXPECT_THROW(giou_loss(std::array<double, 4>{1, 0, 0, 1}, {0, 0, 1, 1}), std::invalid_argument);
}

TEST(GiouLoss, BoundedAndSymmetric) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(0, 1), s(0.01, 0.5);
  for (int i = 0; i < 500; ++i) {
    const Box a{c(rng), c(rng), s(rng), s(rng)}, b{c(rng), c(rng), s(rng), s(rng)};
    const double l = giou_loss(a, b);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
    EXPECT_NEAR(l, giou_loss(b, a), 1e-14);
  }
}

TEST(GiouLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> c(0.2, 0.8), s(0.1, 0.4);
  for (int i = 0; i < 30; ++i) {
    const Box target{c(rng), c(rng), s(rng), s(rng)};
    const Tensor pred({4}, {c(rng), c(rng), s(rng), s(rng)});
    const auto rep = grad_check([&](Tape&, const Var& v) { return ops::giou_loss(v, target); }, pred, 1e-7);
    EXPECT_LT(rep.max_rel_error, 1e-5) << "trial " << i;
  }
}

TEST(L1Loss, MeanAbsoluteOverCoordinates) {
  EXPECT_DOUBLE_EQ(l1_loss(Box{0.5, 0.5, 0.2, 0.2}, Box{0.6, 0.4, 0.2, 0.4}), (0.1 + 0.1 + 0 + 0.2) / 4);
  const Tensor pred({4}, {0.3, 0.7, 0.25, 0.1});
  const auto rep = grad_check([](Tape&, const Var& v) { return ops::l1_loss(v, Box{0.5, 0.5, 0.2, 0.2}); }, pred);
  EXPECT_LT(rep.max_rel_error, 1e-8);
}

TEST(Target, GaussianRadiusKnownValues) {
  // CenterNet radius at min overlap 0.7
  EXPECT_NEAR(gaussian_radius(10, 10), 2.7332005306815113, 1e-12);
  EXPECT_NEAR(gaussian_radius(3.2, 5.6), 1.12, 1e-12);
  EXPECT_LT(gaussian_radius(2, 2), gaussian_radius(4, 4));
}

TEST(Target, SplatHasSinglePeakAtCentreCell) {
  const GtTarget gt = make_target({0.41, 0.77, 0.3, 0.2}, 8);
  EXPECT_EQ(gt.peak_index, 6u * 8 + 3);
  std::size_t ones = 0;
  for (double v : gt.cls_target.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    ones += v == 1.0;
  }
  EXPECT_EQ(ones, 1u);
  EXPECT_EQ(gt.cls_target[gt.peak_index], 1.0);
  // boundary centres clamp into the grid
  EXPECT_EQ(make_target({1.0, 1.0, 0.1, 0.1}, 4).peak_index, 15u);
}

TEST(TotalLoss, WeightedSumOfParts) {
  std::mt19937_64 rng(5);
  Tape tape;
  HeadMaps maps{tape.leaf(random_tensor({1, 4, 4}, rng, 0.05, 0.95), true),
                tape.leaf(random_tensor({2, 4, 4}, rng, 0, 1), true),
                tape.leaf(random_tensor({2, 4, 4}, rng, 0.05, 0.6), true)};
  const GtTarget gt = make_target({0.4, 0.6, 0.3, 0.25}, 4);
  const LossParts parts = total_loss(maps, gt, {2.0, 5.0});
  EXPECT_NEAR(parts.total.value()[0], parts.cls + 2 * parts.iou + 5 * parts.l1, 1e-14);
  // the box read at the peak cell: ((col + ox) / S, (row + oy) / S, w, h)
  const std::size_t k = gt.peak_index;
  const Box read{(k % 4 + maps.offset.value()[k]) / 4, (k / 4 + maps.offset.value()[16 + k]) / 4,
                 maps.size.value()[k], maps.size.value()[16 + k]};
  EXPECT_NEAR(parts.l1, l1_loss(read, gt.box), 1e-15);
  EXPECT_NEAR(parts.iou, giou_loss(read, gt.box), 1e-15);
  EXPECT_THROW(total_loss(maps, gt, {-1.0, 5.0}), std::invalid_argument);
}

TEST(TotalLoss, GradientThroughHeadMaps) {
  std::mt19937_64 rng(6);
  const GtTarget gt = make_target({0.4, 0.6, 0.3, 0.25}, 4);
  std::vector<Tensor> in = {random_tensor({1, 4, 4}, rng, 0.05, 0.95), random_tensor({2, 4, 4}, rng, 0, 1),
                            random_tensor({2, 4, 4}, rng, 0.1, 0.5)};
  const auto rep = grad_check(
      [&](Tape&, const std::vector<Var>& v) { return total_loss(HeadMaps{v[0], v[1], v[2]}, gt, {}).total; }, in,
      {true, true, true}, 1e-7);
  EXPECT_LT(rep.max_rel_error, 1e-5);
}
