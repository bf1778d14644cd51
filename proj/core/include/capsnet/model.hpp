#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capsnet/capsule.hpp"
#include "capsnet/ops.hpp"
#include "capsnet/tensor.hpp"

namespace capsnet {

/// Architecture hyperparameters. Defaults are the traffic-sign network:
/// two 9x9 valid convolutions (stride 1 then 2) of 256 filters, 8-D primary
/// capsules and 43 class capsules of 32 dimensions.
struct ModelConfig {
  std::size_t input_size = 32;
  std::size_t channels = 3;
  std::size_t conv1_filters = 256;
  std::size_t conv1_kernel = 9;
  std::size_t conv2_filters = 256;
  std::size_t conv2_kernel = 9;
  std::size_t conv2_stride = 2;
  std::size_t primary_dim = 8;
  std::size_t num_classes = 43;
  std::size_t class_dim = 32;
  std::size_t routing_iters = 3;
  /// Drop probability after conv1's ReLU.
  double dropout_rate = 0.7;
  /// Initialization: conv filters ~ N(0, conv_init_gain * sqrt(2/fan_in)),
  /// capsule transforms ~ N(0, transform_init_std).
  double conv_init_gain = 1.0;
  double transform_init_std = 0.05;

  std::size_t conv1_output_size() const;
  std::size_t conv2_output_size() const;
  std::size_t num_primary() const;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

struct ParamRef {
  std::string name;
  Tensor* value;
};

struct ConstParamRef {
  std::string name;
  const Tensor* value;
};

struct ModelGradients {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b, transform;
  /// Gradient w.r.t. the input batch.
  Tensor input;

  std::vector<ParamRef> params();
  std::vector<ConstParamRef> params() const;
};

struct CapsForward {
  Tensor input;         // [N,H,W,C]
  Tensor conv1_pre;     // before ReLU
  Tensor conv1_act;     // after ReLU
  Tensor dropout_mask;
  Tensor conv1_out;     // after dropout
  Tensor primary_pre;   // conv2 output reshaped to [N,P,dp]
  Tensor primary;       // squashed primary capsules
  Tensor u_hat;         // [N,P,J,D]
  capsule::RoutingState routing;
  Tensor v;             // [N,J,D]
  Tensor lengths;       // [N,J]
  bool training = false;
};

class CapsNetModel {
 public:
  CapsNetModel() = default;
  /// Parameters drawn from the configured initializers under `seed`.
  CapsNetModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ModelConfig& mutable_config() noexcept { return config_; }

  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  /// Capsule transforms [P, J, D, dp]; u_hat = transform[i,j] * u_i.
  Tensor transform;

  std::vector<ParamRef> params();
  std::vector<ConstParamRef> params() const;
  ModelGradients zero_gradients() const;

  /// batch: [N, input_size, input_size, channels] in [0,1]. Dropout is only
  /// active with training == true, using a mask derived from `seed`.
  CapsForward forward(const Tensor& batch, bool training, std::uint64_t seed = 0, std::size_t first_sample = 0) const;

  /// Exact gradients of the forward graph given upstream gradients on the
  /// class capsule vectors and on their lengths. Either may be empty. The
  /// input gradient is skipped when want_input_grad is false.
  ModelGradients backward(const CapsForward& fwd, const Tensor& grad_v, const Tensor& grad_lengths,
                          bool want_input_grad = true) const;

 private:
  ModelConfig config_;
};

/// Index of the longest class capsule per sample; ties go to the lowest index.
std::vector<int> argmax_lengths(const Tensor& lengths);

}  // namespace capsnet
