#include <gtest/gtest.h>

#include "capsnet/decoder.hpp"
#include "capsnet/gradcheck.hpp"
#include "test_util.hpp"

namespace capsnet {
namespace {

using testing::random_tensor;

TEST(Mask, TargetKeepsOneBlock) {
  const Tensor v = random_tensor({1, 43, 32}, 1);
  const std::vector<int> target{5};
  const MaskResult m = mask(v, std::span<const int>(target));
  ASSERT_EQ(m.masked.shape(), (Shape{1, 43 * 32}));
  for (std::size_t i = 0; i < m.masked.size(); ++i) {
    const bool inside = i >= 5 * 32 && i < 6 * 32;
    if (inside) {
      EXPECT_EQ(m.masked[i], v[i]);
    } else {
      EXPECT_EQ(m.masked[i], 0.0);
    }
  }
}

TEST(Mask, ArgmaxMatchesExplicitTarget) {
  Tensor v = random_tensor({1, 10, 4}, 2, -0.1, 0.1);
  for (std::size_t k = 0; k < 4; ++k) v.at(0, 7, k) = 0.9;
  const std::vector<int> target{7};
  const MaskResult a = mask(v, std::nullopt);
  const MaskResult b = mask(v, std::span<const int>(target));
  EXPECT_EQ(a.masked, b.masked);
  EXPECT_EQ(a.kept, (std::vector<int>{7}));
}

TEST(Mask, IdempotentAndGradientZeroOffTarget) {
  const Tensor v = random_tensor({3, 3, 4}, 3);
  const std::vector<int> target{2, 0, 1};
  const MaskResult once = mask(v, std::span<const int>(target));
  const MaskResult twice = mask(once.masked.reshaped({3, 3, 4}), std::span<const int>(target));
  EXPECT_EQ(once.masked, twice.masked);

  const Tensor g = mask_backward(Tensor({3, 12}, 1.0), once.kept, 3, 4);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(g.at(n, j, k), static_cast<int>(j) == target[n] ? 1.0 : 0.0);
      }
    }
  }
}

TEST(Mask, RejectsOutOfRangeTarget) {
  const std::vector<int> bad{3};
  EXPECT_THROW(mask(Tensor({1, 3, 2}), std::span<const int>(bad)), std::invalid_argument);
}

TEST(Decoder, ZeroEverythingGivesHalf) {
  Decoder dec(DecoderConfig{}, 1);
  for (auto& p : dec.params()) p.value->fill(0.0);
  const DecoderForward f = dec.forward(Tensor({2, 43 * 32}));
  EXPECT_EQ(f.image.shape(), (Shape{2, 32, 32, 3}));
  for (double x : f.image.data()) EXPECT_EQ(x, 0.5);
}

TEST(Decoder, OutputsInsideUnitInterval) {
  DecoderConfig c;
  c.num_classes = 3;
  c.class_dim = 4;
  c.image_size = 8;
  const Decoder dec(c, 2);
  const DecoderForward f = dec.forward(random_tensor({4, 12}, 3, -5, 5));
  for (double x : f.image.data()) {
    EXPECT_GT(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_EQ(f.image, dec.forward(random_tensor({4, 12}, 3, -5, 5)).image);
}

TEST(Decoder, ShallowHasOneHiddenLayer) {
  DecoderConfig c;
  c.shallow = true;
  EXPECT_EQ(Decoder(c, 1).layers.size(), 2u);
  c.shallow = false;
  EXPECT_EQ(Decoder(c, 1).layers.size(), 3u);
}

TEST(Decoder, BackwardMatchesFiniteDifferencesOnToy) {
  DecoderConfig c;
  c.num_classes = 3;
  c.class_dim = 4;
  c.image_size = 8;
  c.hidden1 = 10;
  c.hidden2 = 14;
  Decoder dec(c, 4);
  Tensor v = random_tensor({2, 3, 4}, 5);
  const std::vector<int> target{1, 2};
  const Tensor r = random_tensor({2, 8, 8, 3}, 6);
  auto loss = [&] {
    const Tensor img = dec.forward(mask(v, std::span<const int>(target)).masked).image;
    double s = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) s += img[i] * r[i];
    return s;
  };
  const MaskResult m = mask(v, std::span<const int>(target));
  const DecoderGradients g = dec.backward(dec.forward(m.masked), r);
  const Tensor gv = mask_backward(g.input, m.kept, 3, 4);
  std::vector<gradcheck::Block> blocks{{"v", &v, &gv}};
  auto p = dec.params();
  auto gp = g.params();
  for (std::size_t i = 0; i < p.size(); ++i) blocks.push_back({p[i].name, p[i].value, gp[i].value});
  gradcheck::Options opt;
  opt.step = 1e-5;
  const auto res = gradcheck::check(loss, blocks, opt);
  EXPECT_TRUE(res.passed) << res.render();
}

}  // namespace
}  // namespace capsnet
