#include <gtest/gtest.h>

#include "test_support.hpp"

namespace semfuse {
namespace {

using testing::max_relative_error;
using testing::probe;
using testing::random_off_zero;
using testing::random_tensor;
using V = Var<double>;

TEST(Tensor, ShapeAndIndexing) {
  Tensor<double> t({2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.rank(), 4u);
  t.at(1, 2, 3, 4) = 7.0;
  EXPECT_EQ(t[119], 7.0);
  EXPECT_EQ(shape_string(t.shape()), "(2,3,4,5)");
  EXPECT_THROW(t.reshaped({7}), ShapeMismatch);
  EXPECT_EQ(t.reshaped({120})[119], 7.0);
}

TEST(Tensor, FiniteCheck) {
  Tensor<float> t({3});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Autograd, ConstantsCarryNoGraph) {
  const auto a = V::constant(Tensor<double>({2}, 1.0));
  const auto b = ops::add(a, a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(b.node()->parents.empty());
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  // y = mean(x * x + x) at x = 3 -> dy/dx = 2x + 1 = 7
  auto x = V::parameter(Tensor<double>({1}, 3.0));
  backward(ops::mean(ops::add(ops::mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
  backward(ops::mean(ops::add(ops::mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 14.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(Autograd, BackwardNeedsScalarRoot) {
  auto x = V::parameter(Tensor<double>({2}, 1.0));
  EXPECT_THROW(backward(x), ShapeMismatch);
}

TEST(Autograd, MixedConstantParentsKeepPositions) {
  // sub and weighted_sum with a constant first operand still route gradients to the right parent.
  auto x = V::parameter(Tensor<double>({1}, 2.0));
  const auto c = V::constant(Tensor<double>({1}, 5.0));
  backward(ops::mean(ops::sub(c, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], -1.0);
  x.zero_grad();
  backward(ops::weighted_sum<double>({c, x}, {2.0, 3.0}));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

class OpGradient : public ::testing::Test {
 protected:
  Rng rng{17};
};

TEST_F(OpGradient, Elementwise) {
  auto a = V::parameter(random_off_zero({2, 3, 4, 4}, rng));
  auto b = V::parameter(random_off_zero({2, 3, 4, 4}, rng));
  const auto w = random_tensor({2, 3, 4, 4}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::mul(ops::add(a, b), ops::sub(a, b)), w); }, {a, b}), 1e-6);
  EXPECT_LT(max_relative_error([&] { return probe(ops::leaky_relu(a, 0.2), w); }, {a}), 1e-6);
  EXPECT_LT(max_relative_error([&] { return probe(ops::sigmoid(ops::scale(a, 3.0)), w); }, {a}), 1e-6);
  EXPECT_LT(max_relative_error([&] { return probe(ops::average(a, ops::relu(b)), w); }, {a, b}), 1e-6);
}

TEST_F(OpGradient, ReciprocalAndClamp) {
  Tensor<double> t({5});
  for (auto& v : t.storage()) v = rng.uniform(0.5, 2.0);
  auto x = V::parameter(t);
  const auto w = random_tensor({5}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::reciprocal(ops::clamp_min(x, 0.1)), w); }, {x}), 1e-6);
  // Entries below the floor pass no gradient.
  auto y = V::parameter(Tensor<double>({1}, 0.05));
  backward(ops::mean(ops::clamp_min(y, 0.1)));
  EXPECT_EQ(y.grad()[0], 0.0);
}

/// Direct-loop convolution, zero padded, same output size.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(0), k = w.dim(2);
  Tensor<double> out({n, cout, h, wd});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < wd; ++xx) {
          double acc = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long sy = static_cast<long>(y + ky) - pad, sx = static_cast<long>(xx + kx) - pad;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(wd)) continue;
                acc += w.at(o, c, ky, kx) * x.at(i, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
              }
          out.at(i, o, y, xx) = acc;
        }
  return out;
}

TEST_F(OpGradient, ConvolutionMatchesLoopAndDifferences) {
  for (int pad : {0, 1, 3}) {
    const std::size_t k = 2 * pad + 1;
    auto x = V::parameter(random_tensor({2, 3, 5, 6}, rng));
    auto w = V::parameter(random_tensor({4, 3, k, k}, rng));
    auto b = V::parameter(random_tensor({4}, rng));
    const auto y = ops::conv2d(x, w, b, pad);
    const auto ref = conv_reference(x.value(), w.value(), b.value(), pad);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y.value()[i], ref[i], 1e-12);
    const auto probe_w = random_tensor(ref.shape(), rng);
    EXPECT_LT(max_relative_error([&] { return probe(ops::conv2d(x, w, b, pad), probe_w); }, {x, w, b}), 1e-6);
  }
  auto x = V::parameter(random_tensor({1, 1, 4, 4}, rng));
  auto w = V::parameter(random_tensor({1, 1, 3, 3}, rng));
  auto b = V::parameter(random_tensor({1}, rng));
  EXPECT_THROW(ops::conv2d(x, w, b, 0), ShapeMismatch);
}

TEST_F(OpGradient, MaxPoolPicksFirstMaximum) {
  Tensor<double> t({1, 1, 2, 4}, 0.0);
  t.at(0, 0, 0, 0) = 1.0;
  t.at(0, 0, 1, 1) = 1.0;  // tie with (0,0): the first in row-major order wins
  t.at(0, 0, 1, 3) = 2.0;
  auto x = V::parameter(t);
  const auto y = ops::max_pool2(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(y.value()[0], 1.0);
  EXPECT_EQ(y.value()[1], 2.0);
  backward(ops::mean(y));
  EXPECT_EQ(x.grad().at(0, 0, 0, 0), 0.5);
  EXPECT_EQ(x.grad().at(0, 0, 1, 1), 0.0);
  EXPECT_EQ(x.grad().at(0, 0, 1, 3), 0.5);
}

TEST_F(OpGradient, MaxPoolDifferences) {
  // A shuffled grid keeps every window's maximum well separated from the runner-up.
  Tensor<double> t({2, 2, 4, 6});
  std::vector<std::size_t> order(t.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.integer(0, static_cast<long>(i))]);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(order[i]);
  auto x = V::parameter(t);
  const auto w = random_tensor({2, 2, 2, 3}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::max_pool2(x), w); }, {x}), 1e-6);
}

TEST_F(OpGradient, UpsampleMatchesHandTaps) {
  // Half-pixel centers: output 0 samples input coordinate -0.25 (clamped to 0), output 1 samples 0.25.
  Tensor<double> t({1, 1, 1, 2});
  t[0] = 1.0;
  t[1] = 3.0;
  const auto y = ops::upsample_bilinear2(V::constant(t));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 4}));
  const double expect[4] = {1.0, 1.5, 2.5, 3.0};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(y.value().at(0, 0, r, c), expect[c]);
  auto x = V::parameter(random_tensor({2, 3, 3, 4}, rng));
  const auto w = random_tensor({2, 3, 6, 8}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::upsample_bilinear2(x), w); }, {x}), 1e-6);
}

TEST_F(OpGradient, ChannelPlumbing) {
  auto a = V::parameter(random_tensor({2, 2, 3, 3}, rng));
  auto b = V::parameter(random_tensor({2, 3, 3, 3}, rng));
  const auto cat = ops::concat_channels(a, b);
  ASSERT_EQ(cat.shape(), (Shape{2, 5, 3, 3}));
  EXPECT_EQ(cat.value().at(1, 4, 2, 1), b.value().at(1, 2, 2, 1));
  const auto pc = random_tensor({2, 5, 3, 3}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::concat_channels(a, b), pc); }, {a, b}), 1e-6);
  auto g = V::parameter(random_tensor({2, 1, 3, 3}, rng));
  const auto wr = random_tensor({2, 3, 3, 3}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::repeat_channels(g, 3), wr); }, {g}), 1e-6);
}

TEST_F(OpGradient, TokensLinearSoftmaxBmm) {
  auto f = V::parameter(random_tensor({2, 3, 2, 4}, rng));
  const auto tokens = ops::to_tokens(f);
  ASSERT_EQ(tokens.shape(), (Shape{2, 8, 3}));
  EXPECT_EQ(tokens.value()[(1 * 8 + 5) * 3 + 2], f.value().at(1, 2, 1, 1));
  const auto back = ops::from_tokens(tokens, 2, 4);
  EXPECT_EQ(back.value(), f.value());

  auto x = V::parameter(random_tensor({2, 5, 3}, rng));
  auto w = V::parameter(random_tensor({3, 4}, rng));
  auto b = V::parameter(random_tensor({4}, rng));
  const auto p4 = random_tensor({2, 5, 4}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::linear(x, w, b), p4); }, {x, w, b}), 1e-6);
  EXPECT_LT(max_relative_error([&] { return probe(ops::softmax_tokens(ops::linear(x, w, b)), p4); }, {x, w, b}), 1e-6);

  const auto s = ops::softmax_tokens(V::constant(x.value()));
  for (std::size_t bb = 0; bb < 2; ++bb)
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < 5; ++n) sum += s.value()[(bb * 5 + n) * 3 + c];
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }

  auto a = V::parameter(random_tensor({2, 5, 3}, rng));
  auto c = V::parameter(random_tensor({2, 5, 4}, rng));
  auto d = V::parameter(random_tensor({2, 4, 5}, rng));
  const auto p34 = random_tensor({2, 3, 4}, rng);
  const auto p55 = random_tensor({2, 5, 5}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::bmm(a, c, true), p34); }, {a, c}), 1e-6);
  EXPECT_LT(max_relative_error([&] { return probe(ops::bmm(c, d), p55); }, {c, d}), 1e-6);
  EXPECT_LT(max_relative_error([&] { return probe(ops::bmm(d, c, true, true), p55); }, {c, d}), 1e-6);
}

TEST_F(OpGradient, GatesAndPools) {
  auto f = V::parameter(random_off_zero({2, 4, 3, 3}, rng, 0.01));
  const auto gp = ops::global_avg_pool(f);
  ASSERT_EQ(gp.shape(), (Shape{2, 1, 4}));
  const auto pp = random_tensor({2, 1, 4}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::global_avg_pool(f), pp); }, {f}), 1e-6);
  auto g = V::parameter(random_tensor({2, 1, 4}, rng));
  const auto pg = random_tensor({2, 4, 3, 3}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::expand_channel_gate(g, 3, 3), pg); }, {g}), 1e-6);

  // Distinct magnitudes per pixel keep the channel argmax stable under the step.
  Tensor<double> t({1, 3, 2, 2});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * static_cast<double>((i * 7) % 12) - 0.5;
  auto m = V::parameter(t);
  const auto mm = ops::channel_mean_max(m);
  ASSERT_EQ(mm.shape(), (Shape{1, 2, 2, 2}));
  for (std::size_t p = 0; p < 4; ++p) {
    const double a0 = t[p], a1 = t[4 + p], a2 = t[8 + p];
    EXPECT_NEAR(mm.value()[p], (a0 + a1 + a2) / 3.0, 1e-15);
    EXPECT_EQ(mm.value()[4 + p], std::max({a0, a1, a2}));
  }
  const auto pm = random_tensor({1, 2, 2, 2}, rng);
  EXPECT_LT(max_relative_error([&] { return probe(ops::channel_mean_max(m), pm); }, {m}), 1e-6);
  auto sg = V::parameter(random_tensor({2, 1, 3, 3}, rng));
  EXPECT_LT(max_relative_error([&] { return probe(ops::expand_spatial_gate(sg, 4), pg); }, {sg}), 1e-6);
}

}  // namespace
}  // namespace semfuse
