#include <gtest/gtest.h>

#include <cmath>

#include "mtuda/errors.hpp"
#include "mtuda/rng.hpp"
#include "mtuda/tensor.hpp"
#include "oracles.hpp"

using namespace mtuda;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool rg = false) {
  Tensor t(std::move(shape), 0.0, rg);
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST(Tensor, ShapeProductMatchesValues) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, CopyIsDeepSnapshot) {
  Tensor a({3}, std::vector<double>{1, 2, 3}, true);
  a.mutable_grad()[0] = 5;
  Tensor b = a;
  b.values()[0] = 9;
  EXPECT_EQ(a.values()[0], 1);
  EXPECT_TRUE(b.requires_grad());
  EXPECT_EQ(b.grad()[0], 5);
  a.zero_grad();
  EXPECT_FALSE(a.has_grad());
  EXPECT_TRUE(b.has_grad());
}

TEST(Conv2d, IdentityOneByOne) {
  Rng rng(1);
  Tensor x = random_tensor(rng, {2, 3, 5, 4});
  Tensor w({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w.values()[c * 3 + c] = 1.0;
  Tensor b({3});
  Graph g;
  Tensor y = conv2d(g, x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv2d, AllOnesCenterAndCorner) {
  Tensor x({1, 1, 3, 3}, 1.0);
  Tensor w({1, 1, 3, 3}, 1.0);
  Graph g;
  Tensor y = conv2d(g, x, w, Tensor(), 1, 1);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 4.0);
}

TEST(Conv2d, StridedShape) {
  Graph g;
  Tensor y = conv2d(g, Tensor({2, 4, 16, 16}), Tensor({8, 4, 3, 3}), Tensor({8}), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 8, 8}));
}

TEST(Conv2d, ChannelMismatchThrows) {
  Graph g;
  EXPECT_THROW(conv2d(g, Tensor({1, 3, 8, 8}), Tensor({4, 2, 3, 3}), Tensor(), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(g, Tensor({1, 3, 8, 8}), Tensor({4, 3, 2, 2}), Tensor(), 1, 1), DimensionError);
}

TEST(Conv2d, MatchesNaiveSummation) {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(2), cin = 1 + rng.uniform_int(4), cout = 1 + rng.uniform_int(4);
    const std::size_t h = 3 + rng.uniform_int(8), w = 3 + rng.uniform_int(8);
    const std::size_t k = 1 + 2 * rng.uniform_int(2);
    const int stride = 1 + static_cast<int>(rng.uniform_int(2));
    const int pad = static_cast<int>(rng.uniform_int(2));
    Tensor x = random_tensor(rng, {n, cin, h, w});
    Tensor wt = random_tensor(rng, {cout, cin, k, k});
    Tensor b = random_tensor(rng, {cout});
    Graph g;
    Tensor y = conv2d(g, x, wt, b, stride, pad);
    Tensor ref = oracle::conv2d_naive(x, wt, b, stride, pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.values()[i], ref.values()[i], 1e-10);
  }
}

TEST(LeakyRelu, Values) {
  Graph g;
  Tensor x({3}, std::vector<double>{2.0, -1.0, -3.0}, true);
  Tensor y = leaky_relu(g, x, 0.2);
  EXPECT_DOUBLE_EQ(y.values()[0], 2.0);
  EXPECT_DOUBLE_EQ(y.values()[1], -0.2);
  g.backward(sum(g, y));
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.2);
  EXPECT_THROW(leaky_relu(g, x, 1.0), ContractError);
}

TEST(Upsample, ConstantStaysConstant) {
  Graph g;
  Tensor y = bilinear_upsample(g, Tensor({1, 7, 16, 16}, 0.37), 32, 32);
  EXPECT_EQ(y.shape(), (Shape{1, 7, 32, 32}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.37);
}

TEST(Upsample, TwoByTwoToFourByFour) {
  Graph g;
  Tensor x({1, 1, 2, 2}, std::vector<double>{1, 3, 2, 4});
  Tensor y = bilinear_upsample(g, x, 4, 4);
  Tensor ref = oracle::bilinear_reference(x, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y.values()[i], ref.values()[i], 1e-15);
  // Corners clamp onto the input corners under align_corners = false.
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 3), 3.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 3, 0), 2.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 3, 3), 4.0);
  // Frozen from the reference: second column of the first row.
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 1), 1.5);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 1.5 + 0.25 * 1.0);
  EXPECT_THROW(bilinear_upsample(g, x, 1, 4), DimensionError);
}

TEST(Softmax, UniformAndStable) {
  Graph g;
  Tensor y = softmax_channel(g, Tensor({1, 7, 2, 2}, 0.0));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 7.0);
  Tensor z = softmax_channel(g, Tensor({1, 2, 1, 1}, std::vector<double>{1000.0, 0.0}));
  EXPECT_DOUBLE_EQ(z.values()[0], 1.0);
  EXPECT_LT(z.values()[1], 1e-300);
}

TEST(Softmax, ChannelSumsAndPermutationEquivariance) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 + rng.uniform_int(7);
    Tensor x = random_tensor(rng, {2, c, 3, 4});
    for (double& v : x.values()) v *= 10.0;
    Graph g;
    Tensor y = softmax_channel(g, x);
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t p = 0; p < 12; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += y.at(n, k, p / 4, p % 4);
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
    // Reverse the channel order; equal up to summation rounding.
    Tensor xr = x;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t p = 0; p < 12; ++p)
          xr.values()[(n * c + k) * 12 + p] = x.values()[(n * c + (c - 1 - k)) * 12 + p];
    Tensor yr = softmax_channel(g, xr);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t p = 0; p < 12; ++p)
          EXPECT_NEAR(yr.values()[(n * c + k) * 12 + p], y.values()[(n * c + (c - 1 - k)) * 12 + p], 1e-15);
  }
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  Tensor x({2, 3}, 0.5, true);
  g.backward(sum(g, x));
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  Graph g;
  Tensor x({3}, std::vector<double>{1, 2, 3}, true);
  g.backward(sum(g, mul(g, x, x)));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
  EXPECT_EQ(x.grad()[2], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  Graph g;
  Tensor x({3}, 1.0, true);
  Tensor y = scale(g, x, 2.0);
  EXPECT_THROW(g.backward(y), ContractError);
  Graph other;
  Tensor l = sum(g, x);
  EXPECT_THROW(other.backward(l), ContractError);
}

TEST(Backward, TwiceDoublesExactly) {
  Rng rng(11);
  Tensor x = random_tensor(rng, {1, 2, 5, 5}, true);
  Tensor w = random_tensor(rng, {3, 2, 3, 3}, true);
  Graph g;
  Tensor p = softmax_channel(g, conv2d(g, x, w, Tensor(), 1, 1));
  Tensor loss = mean(g, self_information(g, p));
  g.backward(loss);
  std::vector<double> once(w.grad().begin(), w.grad().end());
  g.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad()[i], 2.0 * once[i]);
}

TEST(Backward, NoGradGraphRecordsNothing) {
  Graph g = Graph::no_grad();
  Tensor x({3}, 1.0, true);
  Tensor y = sum(g, x);
  EXPECT_EQ(g.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Helpers, ArgmaxTiesLowestIndex) {
  Tensor s({1, 3, 1, 2}, std::vector<double>{0.2, 0.5, 0.2, 0.1, 0.6, 0.4});
  LabelMap m = argmax_channel(s);
  EXPECT_EQ(m.values[0], 2);
  EXPECT_EQ(m.values[1], 0);
  LabelMap u = argmax_channel(Tensor({1, 7, 1, 1}, 1.0 / 7.0));
  EXPECT_EQ(u.values[0], 0);
}

TEST(Helpers, NonFiniteIsError) {
  Tensor t({2}, std::vector<double>{1.0, std::nan("")});
  EXPECT_THROW(check_finite(t, "t"), NumericError);
}
