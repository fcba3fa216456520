#include <gtest/gtest.h>

#include "test_support.hpp"

namespace semfuse {
namespace {

using testing::random_image;

TEST(SegModel, LogitShapeAndDivisibility) {
  const SegModel<float> seg(5, 4, 1);
  Rng rng(51);
  const Image img = random_image(16, 24, rng);
  const auto logits = seg.forward(Var<float>::constant(stack_images<float>({&img, &img})));
  EXPECT_EQ(logits.shape(), (Shape{2, 5, 16, 24}));
  const Image odd = random_image(12, 16, rng);
  EXPECT_THROW(seg.forward(Var<float>::constant(stack_images<float>({&odd}))), ShapeMismatch);
  EXPECT_THROW(SegModel<float>(1, 4, 1), ConfigError);
}

TEST(SegModel, WidthsAndSeeding) {
  const SegModel<float> a(4, 8, 3), b(4, 8, 3), c(4, 8, 4);
  EXPECT_EQ(a.level_channels(0), 8u);
  EXPECT_EQ(a.level_channels(3), 64u);
  EXPECT_EQ(a.parameters().find("seg.head.weight").shape(), (Shape{4, 8, 1, 1}));
  EXPECT_EQ(a.parameters().items()[0].var.value(), b.parameters().items()[0].var.value());
  EXPECT_NE(a.parameters().items()[0].var.value(), c.parameters().items()[0].var.value());
}

TEST(Predict, ArgmaxWithLowerIndexTies) {
  Tensor<float> logits({1, 3, 1, 3});
  // pixel 0: class 2 wins; pixel 1: tie 0/1 -> 0; pixel 2: tie 1/2 -> 1
  const float v[3][3] = {{0, 1, 0}, {0, 1, 2}, {1, 0, 2}};
  for (int c = 0; c < 3; ++c)
    for (int x = 0; x < 3; ++x) logits.at(0, c, 0, x) = v[c][x];
  const LabelMap p = predict(logits);
  EXPECT_EQ(p(0, 0), 2);
  EXPECT_EQ(p(0, 1), 0);
  EXPECT_EQ(p(0, 2), 1);
}

TEST(SegModel, GradientReachesFusionParameters) {
  TrainConfig c;
  c.scales = 2;
  c.base_channels = 4;
  const FusionModel<float> fusion(c);
  const SegModel<float> seg(4, 4, 2);
  Rng rng(52);
  const auto pair = testing::random_pair(16, rng);
  const auto fused = fusion.forward(Var<float>::constant(stack_images<float>({&pair.ir})),
                                    Var<float>::constant(stack_images<float>({&pair.vis_luma})));
  const std::vector<LabelMap> labels{*pair.label};
  backward(l_sem(seg.forward(fused), std::span<const LabelMap>(labels), {}).total);
  std::size_t nonzero = 0;
  for (const auto& p : fusion.parameters().items())
    for (float g : p.var.grad().values()) nonzero += g != 0.0f;
  EXPECT_GT(nonzero, 0u);
}

}  // namespace
}  // namespace semfuse
