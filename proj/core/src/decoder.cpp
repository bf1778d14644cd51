#include "capsnet/decoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "capsnet/ops.hpp"
#include "capsnet/random.hpp"

namespace capsnet {

DecoderConfig DecoderConfig::for_model(const ModelConfig& model) {
  DecoderConfig d;
  d.num_classes = model.num_classes;
  d.class_dim = model.class_dim;
  d.image_size = model.input_size;
  d.channels = model.channels;
  return d;
}

Decoder::Decoder(const DecoderConfig& config, std::uint64_t seed) : config_(config) {
  std::vector<std::size_t> sizes{config.input_dim(), config.hidden1};
  if (!config.shallow) sizes.push_back(config.hidden2);
  sizes.push_back(config.output_dim());
  for (std::size_t s : sizes) {
    if (s == 0) throw std::invalid_argument("decoder config: layer sizes must be positive");
  }
  Rng rng(seed, 0x6465636f6465ULL);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    DenseLayer layer{Tensor({sizes[l], sizes[l + 1]}), Tensor({sizes[l + 1]})};
    const double stddev = config.init_gain * std::sqrt(2.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
    for (auto& x : layer.w.data()) x = stddev * rng.normal();
    layers.push_back(std::move(layer));
  }
}

namespace {
template <typename Layers, typename Ref>
std::vector<Ref> layer_params(Layers& layers) {
  std::vector<Ref> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = "decoder/fc" + std::to_string(l + 1);
    out.push_back({base + "/w", &layers[l].w});
    out.push_back({base + "/b", &layers[l].b});
  }
  return out;
}
}  // namespace

std::vector<ParamRef> Decoder::params() { return layer_params<std::vector<DenseLayer>, ParamRef>(layers); }
std::vector<ConstParamRef> Decoder::params() const {
  return layer_params<const std::vector<DenseLayer>, ConstParamRef>(layers);
}
std::vector<ParamRef> DecoderGradients::params() {
  return layer_params<std::vector<DenseLayer>, ParamRef>(layers);
}
std::vector<ConstParamRef> DecoderGradients::params() const {
  return layer_params<const std::vector<DenseLayer>, ConstParamRef>(layers);
}

DecoderGradients Decoder::zero_gradients() const {
  DecoderGradients g;
  for (const auto& l : layers) g.layers.push_back({Tensor(l.w.shape()), Tensor(l.b.shape())});
  return g;
}

DecoderForward Decoder::forward(const Tensor& masked) const {
  if (masked.rank() != 2 || masked.dim(1) != config_.input_dim()) {
    throw ShapeError("decode: expected [N," + std::to_string(config_.input_dim()) + "], got " +
                     shape_string(masked.shape()));
  }
  DecoderForward f;
  f.input = masked;
  const Tensor* x = &f.input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    f.pre.push_back(ops::linear_forward(*x, layers[l].w, layers[l].b));
    const bool last = l + 1 == layers.size();
    f.act.push_back(last ? ops::sigmoid_forward(f.pre.back()) : ops::relu_forward(f.pre.back()));
    x = &f.act.back();
  }
  f.image = f.act.back().reshaped(
      {masked.dim(0), config_.image_size, config_.image_size, config_.channels});
  return f;
}

DecoderGradients Decoder::backward(const DecoderForward& fwd, const Tensor& grad_image) const {
  require_same_shape(grad_image, fwd.image, "decoder backward");
  DecoderGradients g;
  g.layers.resize(layers.size());
  Tensor grad = grad_image.reshaped(fwd.act.back().shape());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const bool last = l + 1 == layers.size();
    Tensor gpre = last ? ops::sigmoid_backward(grad, fwd.act[l]) : ops::relu_backward(grad, fwd.pre[l]);
    const Tensor& x = l == 0 ? fwd.input : fwd.act[l - 1];
    auto lg = ops::linear_backward(gpre, x, layers[l].w);
    g.layers[l] = {std::move(lg.weight), std::move(lg.bias)};
    grad = std::move(lg.input);
  }
  g.input = std::move(grad);
  return g;
}

MaskResult mask(const Tensor& v, std::optional<std::span<const int>> targets) {
  require_rank(v.shape(), 3, "mask v [N,J,D]");
  const std::size_t n = v.dim(0), j = v.dim(1), d = v.dim(2);
  MaskResult r{Tensor({n, j * d}), {}};
  if (targets) {
    if (targets->size() != n) {
      throw ShapeError("mask: " + std::to_string(targets->size()) + " targets for batch of " +
                       std::to_string(n));
    }
    for (int t : *targets) {
      if (t < 0 || static_cast<std::size_t>(t) >= j) {
        throw std::invalid_argument("mask: label " + std::to_string(t) + " outside [0," +
                                    std::to_string(j) + ")");
      }
    }
    r.kept.assign(targets->begin(), targets->end());
  } else {
    r.kept = argmax_lengths(ops::l2_norm(v, 2));
  }
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t k = static_cast<std::size_t>(r.kept[s]);
    const double* src = v.raw() + (s * j + k) * d;
    std::copy(src, src + d, r.masked.raw() + s * j * d + k * d);
  }
  return r;
}

Tensor mask_backward(const Tensor& grad_masked, std::span<const int> kept, std::size_t num_classes,
                     std::size_t class_dim) {
  const std::size_t n = kept.size();
  if (grad_masked.shape() != Shape{n, num_classes * class_dim}) {
    throw ShapeError("mask_backward: grad " + shape_string(grad_masked.shape()));
  }
  Tensor g({n, num_classes, class_dim});
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t off = s * num_classes * class_dim + static_cast<std::size_t>(kept[s]) * class_dim;
    std::copy(grad_masked.raw() + off, grad_masked.raw() + off + class_dim, g.raw() + off);
  }
  return g;
}

}  // namespace capsnet
