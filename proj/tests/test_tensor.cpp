#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "vipt/ops.hpp"
#include "vipt/tape.hpp"
#include "vipt/tensor.hpp"

using namespace vipt;

TEST(Tensor, ShapeAndZeroInit) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
  t.at(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
}

TEST(Tensor, RejectsZeroDimensionsAndBadData) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.at(2, 1), 6.0);
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, DimensionErrorNamesBothShapes) {
  try {
    throw DimensionError("add", {2, 3}, {3, 2});
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3, 2]"), std::string::npos) << msg;
  }
}

TEST(Tensor, BitwiseEqualDistinguishesSignedZero) {
  Tensor a({1}, {0.0}), b({1}, {-0.0});
  EXPECT_FALSE(a.bitwise_equal(b));
  EXPECT_TRUE(a.bitwise_equal(Tensor({1}, {0.0})));
}

TEST(Tape, ChainRuleThroughSharedNode) {
  // f = sum((x * x) + x), df/dx = 2x + 1
  Tape tape;
  Var x = tape.leaf(Tensor({3}, {1.0, -2.0, 0.5}), true);
  Var y = ops::add(ops::mul(x, x), x);
  Var f = ops::sum(y);
  tape.backward(f);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  Var c = tape.constant(Tensor({2}, {3.0, 4.0}));
  tape.backward(ops::sum(ops::mul(x, c)));
  EXPECT_TRUE(c.grad().empty());
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Tape, BackwardNeedsTrackedScalar) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  EXPECT_THROW(tape.backward(x), DimensionError);
  Var c = tape.constant(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(c), std::invalid_argument);
}

TEST(Tape, UntrackedGraphStoresNoClosures) {
  Tape tape;
  Var a = tape.constant(Tensor({2}, {1.0, 2.0}));
  Var b = ops::mul(a, a);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Tape, CrossTapeInputsRejected) {
  Tape t1, t2;
  Var a = t1.leaf(Tensor::scalar(1.0), true);
  Var b = t2.leaf(Tensor::scalar(1.0), true);
  EXPECT_THROW(ops::add(a, b), std::logic_error);
}
