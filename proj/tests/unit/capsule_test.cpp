#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "capsnet/capsule.hpp"
#include "capsnet/gradcheck.hpp"
#include "capsnet/ops.hpp"
#include "test_util.hpp"

namespace capsnet {
namespace {

using capsule::predict_vectors;
using capsule::route;
using capsule::squash;
using testing::random_tensor;

double norm(const Tensor& t, std::size_t row, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += t[row * d + k] * t[row * d + k];
  return std::sqrt(s);
}

TEST(Squash, ZeroVectorMapsToZero) {
  const Tensor v = squash(Tensor({1, 8}));
  for (double x : v.data()) EXPECT_EQ(x, 0.0);
  const Tensor g = capsule::squash_backward(Tensor({1, 8}), Tensor({1, 8}, 1.0));
  for (double x : g.data()) EXPECT_TRUE(std::isfinite(x));
}

TEST(Squash, UnitAxisHalves) {
  Tensor s({1, 5});
  s[0] = 1.0;
  const Tensor v = squash(s);
  EXPECT_NEAR(v[0], 0.5, 1e-7);
  for (std::size_t k = 1; k < 5; ++k) EXPECT_EQ(v[k], 0.0);
}

TEST(Squash, ThreeFour) {
  const Tensor v = squash(Tensor::from({1, 2}, {3.0, 4.0}));
  // the 1e-7 stabilizer under the root shifts the result by about 2e-9
  EXPECT_NEAR(v[0], 15.0 / 26.0, 1e-8);
  EXPECT_NEAR(v[1], 20.0 / 26.0, 1e-8);
  EXPECT_NEAR(norm(v, 0, 2), 25.0 / 26.0, 1e-8);
  EXPECT_DOUBLE_EQ(v[0], 3.0 * 25.0 / (26.0 * std::sqrt(25.0 + 1e-7)));
}

TEST(Squash, PropertyNormBelowOneAndDirectionKept) {
  Rng rng(5);
  for (std::size_t d : {2u, 8u, 32u}) {
    Tensor s({200, d});
    for (auto& x : s.data()) x = rng.normal() * std::exp(rng.uniform(-6.0, 4.0));
    const Tensor v = squash(s);
    for (std::size_t r = 0; r < 200; ++r) {
      const double ns = norm(s, r, d), nv = norm(v, r, d);
      EXPECT_LT(nv, 1.0);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += s[r * d + k] * v[r * d + k];
      EXPECT_NEAR(dot / (ns * nv), 1.0, 1e-9);
    }
  }
}

TEST(Predict, HandMatrixVectorProduct) {
  const Tensor w = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor u = Tensor::from({1, 1, 2}, {1, 1});
  const Tensor uh = predict_vectors(u, w);
  ASSERT_EQ(uh.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(uh[0], 3.0);
  EXPECT_EQ(uh[1], 7.0);
}

TEST(Predict, IdentityBlocksCopyInput) {
  const std::size_t p = 3, j = 4, d = 32;
  Tensor w({p, j, d, d});
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t c = 0; c < j; ++c) {
      for (std::size_t k = 0; k < d; ++k) w.at(i, c, k, k) = 1.0;
    }
  }
  const Tensor u = random_tensor({2, p, d}, 1);
  const Tensor uh = predict_vectors(u, w);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t c = 0; c < j; ++c) {
        for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(uh.at(n, i, c, k), u.at(n, i, k));
      }
    }
  }
}

TEST(Predict, ZeroInputGivesZero) {
  const Tensor uh = predict_vectors(Tensor({2, 3, 4}), random_tensor({3, 5, 6, 4}, 2));
  for (double x : uh.data()) EXPECT_EQ(x, 0.0);
}

TEST(Predict, RejectsMismatchedDims) {
  EXPECT_THROW(predict_vectors(Tensor({1, 3, 4}), Tensor({3, 2, 2, 5})), ShapeError);
  EXPECT_THROW(predict_vectors(Tensor({1, 2, 4}), Tensor({3, 2, 2, 4})), ShapeError);
}

TEST(Routing, SingleInputSingleClassIsSquash) {
  const Tensor uh = random_tensor({1, 1, 1, 3}, 3);
  const auto r = route(uh, 3);
  for (const auto& c : r.state.coupling) EXPECT_EQ(c[0], 1.0);
  EXPECT_EQ(r.v, squash(uh.reshaped({1, 1, 3})));
}

TEST(Routing, IdenticalPredictionsAddUp) {
  const Tensor one = random_tensor({1, 1, 1, 2}, 4);
  Tensor uh({1, 2, 1, 2});
  for (std::size_t i = 0; i < 2; ++i) {
    uh.at(0, i, 0, 0) = one[0];
    uh.at(0, i, 0, 1) = one[1];
  }
  const Tensor expected = squash(ops::scale(one.reshaped({1, 1, 2}), 2.0));
  const auto r = route(uh, 3);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(r.v[k], expected[k], 1e-12);
}

TEST(Routing, CouplingRowsSumToOneEveryIteration) {
  const Tensor uh = random_tensor({2, 5, 4, 3}, 5, -2, 2);
  const auto r = route(uh, 4);
  ASSERT_EQ(r.state.coupling.size(), 4u);
  for (const auto& c : r.state.coupling) {
    for (std::size_t row = 0; row < 2 * 5; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < 4; ++j) s += c[row * 4 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Routing, LogitUpdateIsAgreement) {
  const Tensor uh = random_tensor({1, 3, 2, 2}, 6);
  const auto r = route(uh, 3);
  for (std::size_t t = 0; t + 1 < 3; ++t) {
    const Tensor& v = r.state.output[t];
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        const double agree = uh.at(0, i, j, 0) * v.at(0, j, 0) + uh.at(0, i, j, 1) * v.at(0, j, 1);
        const double delta = r.state.logits[t + 1].at(0, i, j) - r.state.logits[t].at(0, i, j);
        EXPECT_NEAR(delta, agree, 1e-14);
      }
    }
  }
}

TEST(Routing, SingleIterationIsUniformCoupling) {
  const std::size_t p = 4, j = 3, d = 2;
  const Tensor uh = random_tensor({2, p, j, d}, 7);
  const Tensor grad_v = random_tensor({2, j, d}, 8);
  const auto r = route(uh, 1);
  for (double c : r.state.coupling[0].data()) EXPECT_NEAR(c, 1.0 / j, 1e-15);

  // fixed coupling: s = (1/J) sum_i u_hat, so d/du_hat = (1/J) squash'(s)^T grad_v
  const Tensor& s = r.state.total[0];
  const Tensor gs = capsule::squash_backward(s, grad_v);
  const Tensor gu = capsule::route_backward(uh, r.state, grad_v);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t c = 0; c < j; ++c) {
        for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(gu.at(n, i, c, k), gs.at(n, c, k) / j, 1e-14);
      }
    }
  }
}

TEST(Routing, RejectsZeroIterations) { EXPECT_THROW(route(Tensor({1, 1, 1, 1}), 0), std::invalid_argument); }

TEST(Routing, FurtherIterationsChangeNothingForOneInput) {
  const Tensor uh = random_tensor({1, 1, 1, 4}, 9);
  EXPECT_EQ(route(uh, 1).v, route(uh, 5).v);
}

TEST(Capsules, BackwardMatchesCentralDifferences) {
  Tensor u = random_tensor({2, 3, 2}, 10);
  Tensor w = random_tensor({3, 2, 3, 2}, 11);
  const Tensor r = random_tensor({2, 2, 3}, 12);
  auto loss = [&] {
    const Tensor v = route(predict_vectors(u, w), 3).v;
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * r[i];
    return s;
  };
  const Tensor uh = predict_vectors(u, w);
  const auto routed = route(uh, 3);
  const auto g = capsule::predict_vectors_backward(capsule::route_backward(uh, routed.state, r), u, w);
  const gradcheck::Block blocks[] = {{"u", &u, &g.u}, {"w", &w, &g.weights}};
  gradcheck::Options opt;
  opt.step = 1e-5;
  const auto res = gradcheck::check(loss, blocks, opt);
  EXPECT_TRUE(res.passed) << res.render();
}

}  // namespace
}  // namespace capsnet
