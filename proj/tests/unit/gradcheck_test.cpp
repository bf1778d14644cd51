#include <gtest/gtest.h>

#include "capsnet/gradcheck.hpp"
#include "test_util.hpp"

namespace capsnet {
namespace {

double half_square(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += 0.5 * v * v;
  return s;
}

TEST(GradCheck, QuadraticIsExact) {
  Tensor x = testing::random_tensor({4, 5}, 1);
  const Tensor g = x;
  gradcheck::Options opt;
  opt.step = 1e-4;
  opt.tolerance = 1e-9;
  const gradcheck::Block blocks[] = {{"x", &x, &g}};
  const auto r = gradcheck::check([&] { return half_square(x); }, blocks, opt);
  EXPECT_TRUE(r.passed) << r.render();
  EXPECT_LE(r.max_rel_error(), 1e-9);
}

TEST(GradCheck, CorruptedCoordinateIsLocated) {
  Tensor x = testing::random_tensor({3, 3}, 2, 0.5, 1.0);
  Tensor g = x;
  g[7] *= 2.0;
  const gradcheck::Block blocks[] = {{"x", &x, &g}};
  const auto r = gradcheck::check([&] { return half_square(x); }, blocks, {});
  EXPECT_FALSE(r.passed);
  ASSERT_EQ(r.blocks.size(), 1u);
  EXPECT_EQ(r.blocks[0].worst_index, 7u);
  EXPECT_GE(r.blocks[0].max_abs_error, 0.0);
}

TEST(GradCheck, ParametersAreRestored) {
  Tensor x = testing::random_tensor({10}, 3);
  const Tensor copy = x;
  const Tensor g = x;
  const gradcheck::Block blocks[] = {{"x", &x, &g}};
  gradcheck::check([&] { return half_square(x); }, blocks, {});
  EXPECT_EQ(x, copy);
}

TEST(GradCheck, NonDeterministicLossIsRejected) {
  Tensor x({2});
  const Tensor g({2});
  int calls = 0;
  const gradcheck::Block blocks[] = {{"x", &x, &g}};
  EXPECT_THROW(gradcheck::check([&] { return static_cast<double>(++calls); }, blocks, {}), std::runtime_error);
}

TEST(GradCheck, LargeBlocksAreSampledDeterministically) {
  Tensor x = testing::random_tensor({20000}, 4);
  const Tensor g = x;
  gradcheck::Options opt;
  opt.sampled_coords = 50;
  const gradcheck::Block blocks[] = {{"x", &x, &g}};
  const auto a = gradcheck::check([&] { return half_square(x); }, blocks, opt);
  const auto b = gradcheck::check([&] { return half_square(x); }, blocks, opt);
  EXPECT_EQ(a.blocks[0].checked, 50u);
  EXPECT_EQ(a.blocks[0].worst_index, b.blocks[0].worst_index);
}

TEST(GradCheck, EveryComponentPasses) {
  const auto r = gradcheck::check_components(3, {});
  EXPECT_TRUE(r.passed) << r.render();
  EXPECT_GE(r.blocks.size(), 15u);
}

TEST(GradCheck, DeskConfigurationShape) {
  const ModelConfig c = gradcheck::desk_model_config();
  EXPECT_EQ(c.input_size, 8u);
  EXPECT_EQ(c.conv1_kernel, 3u);
  EXPECT_EQ(c.num_primary(), 4u);
  EXPECT_EQ(c.primary_dim, 2u);
  EXPECT_EQ(c.num_classes, 3u);
  EXPECT_EQ(c.routing_iters, 2u);
}

}  // namespace
}  // namespace capsnet
