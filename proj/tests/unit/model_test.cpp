#include <gtest/gtest.h>

#include "capsnet/gradcheck.hpp"
#include "capsnet/model.hpp"
#include "test_util.hpp"

namespace capsnet {
namespace {

using testing::random_tensor;

TEST(ModelConfig, DefaultGeometry) {
  const ModelConfig c;
  EXPECT_EQ(c.conv1_output_size(), 24u);
  EXPECT_EQ(c.conv2_output_size(), 8u);
  EXPECT_EQ(c.num_primary(), 2048u);
  EXPECT_EQ(c.num_classes, 43u);
  EXPECT_EQ(c.class_dim, 32u);
}

TEST(ModelConfig, RejectsBadValues) {
  ModelConfig c;
  c.routing_iters = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.routing_iters = 11;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.num_classes = 44;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.conv2_filters = 250;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Model, FullSizeForwardShapes) {
  const CapsNetModel model(ModelConfig{}, 1);
  const CapsForward f = model.forward(random_tensor({1, 32, 32, 3}, 2, 0, 1), false);
  EXPECT_EQ(f.conv1_pre.shape(), (Shape{1, 24, 24, 256}));
  EXPECT_EQ(f.primary.shape(), (Shape{1, 2048, 8}));
  EXPECT_EQ(f.v.shape(), (Shape{1, 43, 32}));
  EXPECT_EQ(f.lengths.shape(), (Shape{1, 43}));
  for (double len : f.lengths.data()) {
    EXPECT_GE(len, 0.0);
    EXPECT_LT(len, 1.0);
  }
}

ModelConfig small_config() {
  ModelConfig c;
  c.conv1_filters = 8;
  c.conv2_filters = 16;
  c.primary_dim = 4;
  c.num_classes = 5;
  c.class_dim = 6;
  return c;
}

TEST(Model, InferenceIsDeterministic) {
  const CapsNetModel model(small_config(), 3);
  const Tensor x = random_tensor({2, 32, 32, 3}, 4, 0, 1);
  EXPECT_EQ(model.forward(x, false, 1).v, model.forward(x, false, 99).v);
}

TEST(Model, TrainingForwardDeterministicUnderSeed) {
  const CapsNetModel model(small_config(), 3);
  const Tensor x = random_tensor({2, 32, 32, 3}, 4, 0, 1);
  EXPECT_EQ(model.forward(x, true, 7).v, model.forward(x, true, 7).v);
  EXPECT_NE(model.forward(x, true, 7).v, model.forward(x, true, 8).v);
}

TEST(Model, SameSeedSameParameters) {
  const CapsNetModel a(small_config(), 11), b(small_config(), 11), c(small_config(), 12);
  EXPECT_EQ(a.transform, b.transform);
  EXPECT_EQ(a.conv1_w, b.conv1_w);
  EXPECT_NE(a.conv1_w, c.conv1_w);
  for (double v : a.conv1_b.data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, ZeroUpstreamGivesZeroGradients) {
  const CapsNetModel model(small_config(), 5);
  const CapsForward f = model.forward(random_tensor({2, 32, 32, 3}, 6, 0, 1), true, 1);
  const ModelGradients g = model.backward(f, Tensor(f.v.shape()), Tensor(f.lengths.shape()));
  for (const auto& p : g.params()) {
    for (double v : p.value->data()) EXPECT_EQ(v, 0.0) << p.name;
  }
}

TEST(Model, RejectsWrongInputShape) {
  const CapsNetModel model(small_config(), 5);
  EXPECT_THROW(model.forward(Tensor({1, 30, 32, 3}), false), ShapeError);
  EXPECT_THROW(model.forward(Tensor({1, 32, 32, 1}), false), ShapeError);
}

TEST(Model, ArgmaxTiesGoToLowestIndex) {
  const Tensor lengths = Tensor::from({2, 3}, {0.2, 0.7, 0.7, 0.5, 0.1, 0.5});
  EXPECT_EQ(argmax_lengths(lengths), (std::vector<int>{1, 0}));
}

TEST(Model, DeskGraphGradientsMatchFiniteDifferences) {
  gradcheck::Options opt;
  opt.step = 1e-4;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const auto res = gradcheck::check_full_graph(seed, opt);
    EXPECT_TRUE(res.passed) << "seed " << seed << "\n" << res.render();
  }
}

}  // namespace
}  // namespace capsnet
