#pragma once

#include <cstddef>
#include <vector>

#include "capsnet/tensor.hpp"

namespace capsnet::capsule {

/// v = |s|^2 / (1 + |s|^2) * s / sqrt(|s|^2 + eps), applied along the last
/// axis. The zero vector maps to the zero vector and the output length is
/// always below one.
Tensor squash(const Tensor& s);
Tensor squash_backward(const Tensor& s, const Tensor& grad_v);

/// u: [N, P, dp], weights: [P, J, D, dp]. Returns u_hat [N, P, J, D] with
/// u_hat[n,i,j] = weights[i,j] * u[n,i].
Tensor predict_vectors(const Tensor& u, const Tensor& weights);

struct PredictGrads {
  Tensor u;
  Tensor weights;
};
PredictGrads predict_vectors_backward(const Tensor& grad_u_hat, const Tensor& u,
                                      const Tensor& weights);

/// Everything routing-by-agreement computed, one entry per iteration, kept
/// for the backward pass.
struct RoutingState {
  std::size_t iterations = 0;
  std::vector<Tensor> logits;    // [N, P, J] before the softmax of iteration t
  std::vector<Tensor> coupling;  // [N, P, J], rows sum to one over J
  std::vector<Tensor> total;     // s_j, [N, J, D]
  std::vector<Tensor> output;    // v_j = squash(s_j), [N, J, D]
};

struct RoutingResult {
  Tensor v;  // [N, J, D], equal to state.output.back()
  RoutingState state;
};

/// Dynamic routing over u_hat [N, P, J, D]. Logits start at zero for every
/// call; every iteration but the last adds the agreement u_hat . v to them.
RoutingResult route(const Tensor& u_hat, std::size_t iterations);

/// Gradient w.r.t. u_hat through all unrolled iterations, including the
/// logit updates.
Tensor route_backward(const Tensor& u_hat, const RoutingState& state, const Tensor& grad_v);

}  // namespace capsnet::capsule
