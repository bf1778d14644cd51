#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "capsnet/model.hpp"
#include "capsnet/tensor.hpp"

namespace capsnet {

/// Fully connected reconstruction network. The deep variant is
/// in -> hidden1 -> hidden2 -> image; the shallow variant drops hidden2.
/// Hidden layers use ReLU, the output layer a sigmoid.
struct DecoderConfig {
  std::size_t num_classes = 43;
  std::size_t class_dim = 32;
  std::size_t hidden1 = 512;
  std::size_t hidden2 = 1024;
  bool shallow = false;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  double init_gain = 1.0;

  std::size_t input_dim() const { return num_classes * class_dim; }
  std::size_t output_dim() const { return image_size * image_size * channels; }
  /// Decoder matching a model's class capsules and input images.
  static DecoderConfig for_model(const ModelConfig& model);
};

struct DenseLayer {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

struct DecoderForward {
  Tensor input;                    // masked capsules [N, J*D]
  std::vector<Tensor> pre;         // per-layer pre-activation
  std::vector<Tensor> act;         // per-layer activation
  Tensor image;                    // [N, H, W, C]
};

struct DecoderGradients {
  std::vector<DenseLayer> layers;
  Tensor input;

  std::vector<ParamRef> params();
  std::vector<ConstParamRef> params() const;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& config, std::uint64_t seed);

  const DecoderConfig& config() const noexcept { return config_; }

  std::vector<DenseLayer> layers;

  /// Names are prefixed with "decoder/".
  std::vector<ParamRef> params();
  std::vector<ConstParamRef> params() const;
  DecoderGradients zero_gradients() const;

  DecoderForward forward(const Tensor& masked) const;
  DecoderGradients backward(const DecoderForward& fwd, const Tensor& grad_image) const;

 private:
  DecoderConfig config_;
};

struct MaskResult {
  Tensor masked;          // [N, J*D]
  std::vector<int> kept;  // surviving class per sample
};

/// Zero every class capsule but one per sample: the target when labels are
/// given, otherwise the longest capsule (lowest index on ties).
MaskResult mask(const Tensor& v, std::optional<std::span<const int>> targets);
/// Routes the gradient of the flattened masked output back to v [N,J,D].
Tensor mask_backward(const Tensor& grad_masked, std::span<const int> kept, std::size_t num_classes,
                     std::size_t class_dim);

}  // namespace capsnet
