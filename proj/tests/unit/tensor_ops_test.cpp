#include <gtest/gtest.h>

#include <cmath>

#include "capsnet/gradcheck.hpp"
#include "capsnet/ops.hpp"
#include "capsnet/parallel.hpp"
#include "test_util.hpp"

namespace capsnet {
namespace {

using testing::random_tensor;

TEST(Tensor, ShapeProductMatchesStorage) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t.at(1, 2, 3) = 7.0;
  EXPECT_EQ(t[23], 7.0);
  EXPECT_THROW(t.at(2, 0, 0), std::out_of_range);
  EXPECT_THROW(t.at(0, 0), std::out_of_range);
  EXPECT_THROW(t.reshape({5, 5}), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_EQ(t.reshaped({6, 4}).dim(0), 6u);
}

TEST(Tensor, FloatRoundTripIsExactForFloatValues) {
  FloatTensor f({3}, 0.1f);
  EXPECT_EQ(to_float(to_double(f)), f);
}

TEST(Conv2d, ValidConvolutionShape) {
  const Tensor x({1, 32, 32, 3});
  const Tensor w({9, 9, 3, 256});
  const Tensor b({256});
  const Tensor y = ops::conv2d_forward(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{1, 24, 24, 256}));
}

TEST(Conv2d, ZeroInputAndBiasGiveZeros) {
  const Tensor y = ops::conv2d_forward(Tensor({2, 5, 5, 2}), random_tensor({3, 3, 2, 3}, 1), Tensor({3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, OnesWindowSums) {
  const Tensor x({1, 3, 3, 1}, 1.0);
  const Tensor w({2, 2, 1, 1}, 1.0);
  const Tensor y = ops::conv2d_forward(x, w, Tensor({1}));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 1}));
  for (double v : y.data()) EXPECT_EQ(v, 4.0);

  const auto g = ops::conv2d_backward(Tensor(y.shape(), 1.0), x, w);
  ASSERT_EQ(g.bias.size(), 1u);
  EXPECT_EQ(g.bias[0], 4.0);
}

TEST(Conv2d, ZeroUpstreamGivesZeroGradients) {
  const Tensor x = random_tensor({1, 5, 5, 2}, 2);
  const Tensor w = random_tensor({3, 3, 2, 2}, 3);
  const auto g = ops::conv2d_backward(Tensor({1, 3, 3, 2}), x, w);
  for (const Tensor* t : {&g.input, &g.filters, &g.bias}) {
    for (double v : t->data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Conv2d, IdentityFilterIsIdentityPerChannel) {
  const Tensor x = random_tensor({2, 4, 4, 3}, 4);
  Tensor w({1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.at(0, 0, c, c) = 1.0;
  EXPECT_EQ(ops::conv2d_forward(x, w, Tensor({3})), x);
}

TEST(Conv2d, BackwardMatchesCentralDifferences) {
  Tensor x = random_tensor({1, 6, 6, 2}, 5);
  Tensor w = random_tensor({3, 3, 2, 4}, 6);
  Tensor b = random_tensor({4}, 7);
  const Tensor r = random_tensor({1, 4, 4, 4}, 8);
  const auto g = ops::conv2d_backward(r, x, w);
  auto loss = [&] {
    const Tensor y = ops::conv2d_forward(x, w, b);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  gradcheck::Options opt;
  opt.step = 1e-4;
  opt.tolerance = 1e-6;
  const gradcheck::Block blocks[] = {{"input", &x, &g.input}, {"filters", &w, &g.filters}, {"bias", &b, &g.bias}};
  const auto result = gradcheck::check(loss, blocks, opt);
  EXPECT_TRUE(result.passed) << result.render();
}

TEST(Conv2d, RejectsMismatchedChannels) {
  EXPECT_THROW(ops::conv2d_forward(Tensor({1, 5, 5, 2}), Tensor({3, 3, 3, 1}), Tensor({1})), ShapeError);
  EXPECT_THROW(ops::conv2d_forward(Tensor({1, 2, 2, 1}), Tensor({3, 3, 1, 1}), Tensor({1})), ShapeError);
}

TEST(Conv2d, ThreadCountDoesNotChangeResults) {
  const Tensor x = random_tensor({5, 9, 9, 2}, 9);
  const Tensor w = random_tensor({3, 3, 2, 4}, 10);
  const Tensor b = random_tensor({4}, 11);
  const Tensor r = random_tensor({5, 4, 4, 4}, 12);
  const std::size_t before = num_threads();
  set_num_threads(1);
  const Tensor y1 = ops::conv2d_forward(x, w, b, {2, 0});
  const auto g1 = ops::conv2d_backward(r, x, w, {2, 0});
  set_num_threads(3);
  const Tensor y3 = ops::conv2d_forward(x, w, b, {2, 0});
  const auto g3 = ops::conv2d_backward(r, x, w, {2, 0});
  set_num_threads(before);
  EXPECT_EQ(y1, y3);
  EXPECT_EQ(g1.input, g3.input);
  for (std::size_t i = 0; i < g1.filters.size(); ++i) EXPECT_NEAR(g1.filters[i], g3.filters[i], 1e-12);
}

TEST(Elementwise, ReluSigmoidSoftmaxExamples) {
  const Tensor r = ops::relu_forward(Tensor::from({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(r, Tensor::from({3}, {0.0, 0.0, 2.0}));
  EXPECT_EQ(ops::sigmoid_forward(Tensor({1}))[0], 0.5);
  EXPECT_EQ(ops::softmax(Tensor::from({1, 1}, {3.7}), 1)[0], 1.0);
}

TEST(Elementwise, SoftmaxShiftInvariance) {
  const Tensor x = random_tensor({3, 5}, 13, -4, 4);
  Tensor shifted = x;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) shifted.at(i, j) += 10.0 * static_cast<double>(i) - 3.0;
  }
  const Tensor a = ops::softmax(x, 1);
  const Tensor b = ops::softmax(shifted, 1);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Elementwise, MatmulAndReduce) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::from({2, 1}, {1, 1});
  EXPECT_EQ(ops::matmul(a, b), Tensor::from({2, 1}, {3, 7}));
  EXPECT_EQ(ops::reduce_sum(a, 0), Tensor::from({2}, {4, 6}));
  EXPECT_THROW(ops::matmul(a, Tensor({3, 1})), ShapeError);
}

TEST(Elementwise, NormOfZeroVectorIsFinite) {
  const Tensor n = ops::l2_norm(Tensor({1, 4}), 1);
  EXPECT_TRUE(std::isfinite(n[0]));
  EXPECT_NEAR(n[0], std::sqrt(ops::kNormEpsilon), 1e-15);
}

TEST(Dropout, RateZeroAndInferenceAreIdentity) {
  const Tensor x = random_tensor({4, 6}, 14);
  const auto d0 = ops::dropout_forward(x, 0.0, 1, true);
  EXPECT_EQ(d0.output, x);
  for (double m : d0.mask.data()) EXPECT_EQ(m, 1.0);
  const auto di = ops::dropout_forward(x, 0.7, 1, false);
  EXPECT_EQ(di.output, x);
}

TEST(Dropout, KeptFractionConcentrates) {
  const auto d = ops::dropout_forward(Tensor({100000}, 1.0), 0.7, 42, true);
  std::size_t kept = 0;
  for (double m : d.mask.data()) kept += m != 0.0;
  EXPECT_NEAR(static_cast<double>(kept) / 1e5, 0.30, 0.01);
  for (double m : d.mask.data()) {
    if (m != 0.0) EXPECT_NEAR(m, 1.0 / 0.3, 1e-12);
  }
}

TEST(Dropout, SameSeedSameMask) {
  const Tensor x({64}, 1.0);
  EXPECT_EQ(ops::dropout_forward(x, 0.5, 3, true).mask, ops::dropout_forward(x, 0.5, 3, true).mask);
  EXPECT_NE(ops::dropout_forward(x, 0.5, 3, true).mask, ops::dropout_forward(x, 0.5, 4, true).mask);
  EXPECT_THROW(ops::dropout_forward(x, 1.0, 3, true), std::invalid_argument);
}

TEST(Property, ForwardOpsStayFiniteOnFiniteInputs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor x = random_tensor({3, 7}, seed, -50, 50);
    EXPECT_TRUE(all_finite(ops::softmax(x, 1).data()));
    EXPECT_TRUE(all_finite(ops::sigmoid_forward(x).data()));
    EXPECT_TRUE(all_finite(ops::l2_norm(x, 1).data()));
    EXPECT_TRUE(all_finite(ops::relu_forward(x).data()));
  }
}

}  // namespace
}  // namespace capsnet
