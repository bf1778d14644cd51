#pragma once

#include <cstddef>
#include <cstdint>

#include "capsnet/tensor.hpp"

namespace capsnet::ops {

/// Added under the square root of every vector norm so that the norm and its
/// gradient stay finite at the zero vector.
inline constexpr double kNormEpsilon = 1e-7;

// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x[..., k] + bias[k]
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Fully connected layer: x[N,in] * w[in,out] + b[out].
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w);

// Activations

Tensor relu_forward(const Tensor& x);
/// Gradient passes where the forward input was strictly positive.
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);
Tensor sigmoid_forward(const Tensor& x);
/// Takes the forward output y, not the input.
Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y);

// Reductions

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_backward(const Tensor& grad_out, const Tensor& y, std::size_t axis);
/// Removes `axis`. A rank-1 input reduces to shape [1].
Tensor reduce_sum(const Tensor& x, std::size_t axis);
/// sqrt(sum(x^2) + eps) along `axis`, which is removed.
Tensor l2_norm(const Tensor& x, std::size_t axis, double eps = kNormEpsilon);
Tensor l2_norm_backward(const Tensor& grad_out, const Tensor& x, const Tensor& norm,
                        std::size_t axis);

// Convolution, NHWC input with [K,K,Cin,Cout] filters.

struct Conv2dOptions {
  std::size_t stride = 1;
  /// Zero padding added on every border. 0 is a valid convolution.
  std::size_t padding = 0;
};

std::size_t conv_output_size(std::size_t in, std::size_t kernel, const Conv2dOptions& opt);

Tensor conv2d_forward(const Tensor& input, const Tensor& filters, const Tensor& bias,
                      const Conv2dOptions& opt = {});

struct Conv2dGrads {
  Tensor input;
  Tensor filters;
  Tensor bias;
};
/// With want_input == false the returned input gradient is left empty.
Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const Tensor& filters,
                            const Conv2dOptions& opt = {}, bool want_input = true);

// Dropout

struct DropoutResult {
  Tensor output;
  /// Per-element multiplier: 0 for dropped units, 1/(1-rate) for survivors.
  Tensor mask;
};

/// Inverted dropout. With training == false the output is the input and the
/// mask is all ones. Sample i along axis 0 draws its mask from stream
/// first_sample + i, so splitting a batch does not change any mask.
DropoutResult dropout_forward(const Tensor& input, double rate, std::uint64_t seed, bool training,
                              std::size_t first_sample = 0);
Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask);

}  // namespace capsnet::ops
