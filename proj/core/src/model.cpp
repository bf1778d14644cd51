#include "capsnet/model.hpp"

#include <cmath>
#include <stdexcept>

#include "capsnet/random.hpp"

namespace capsnet {
namespace {

void fill_normal(Tensor& t, double stddev, Rng& rng) {
  for (auto& x : t.data()) x = stddev * rng.normal();
}

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
}

}  // namespace

std::size_t ModelConfig::conv1_output_size() const {
  return ops::conv_output_size(input_size, conv1_kernel, {1, 0});
}

std::size_t ModelConfig::conv2_output_size() const {
  return ops::conv_output_size(conv1_output_size(), conv2_kernel, {conv2_stride, 0});
}

std::size_t ModelConfig::num_primary() const {
  const std::size_t side = conv2_output_size();
  return side * side * (conv2_filters / primary_dim);
}

void ModelConfig::validate() const {
  require_positive(input_size, "input_size");
  require_positive(channels, "channels");
  require_positive(conv1_filters, "conv1_filters");
  require_positive(conv1_kernel, "conv1_kernel");
  require_positive(conv2_filters, "conv2_filters");
  require_positive(conv2_kernel, "conv2_kernel");
  require_positive(conv2_stride, "conv2_stride");
  require_positive(primary_dim, "primary_dim");
  require_positive(num_classes, "num_classes");
  require_positive(class_dim, "class_dim");
  if (conv1_kernel > input_size) throw std::invalid_argument("model config: conv1_kernel exceeds input_size");
  if (conv2_kernel > conv1_output_size()) {
    throw std::invalid_argument("model config: conv2_kernel exceeds conv1 output size " +
                                std::to_string(conv1_output_size()));
  }
  if (conv2_filters % primary_dim != 0) {
    throw std::invalid_argument("model config: conv2_filters must be a multiple of primary_dim");
  }
  if (routing_iters < 1 || routing_iters > 10) {
    throw std::invalid_argument("model config: routing_iters must be in [1, 10]");
  }
  if (num_classes > 43) throw std::invalid_argument("model config: at most 43 classes");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw std::invalid_argument("model config: dropout_rate must be in [0, 1)");
  }
}

std::vector<ParamRef> ModelGradients::params() {
  return {{"conv1/w", &conv1_w}, {"conv1/b", &conv1_b}, {"conv2/w", &conv2_w},
          {"conv2/b", &conv2_b}, {"caps/w", &transform}};
}

std::vector<ConstParamRef> ModelGradients::params() const {
  return {{"conv1/w", &conv1_w}, {"conv1/b", &conv1_b}, {"conv2/w", &conv2_w},
          {"conv2/b", &conv2_b}, {"caps/w", &transform}};
}

CapsNetModel::CapsNetModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  conv1_w = Tensor({c.conv1_kernel, c.conv1_kernel, c.channels, c.conv1_filters});
  conv1_b = Tensor({c.conv1_filters});
  conv2_w = Tensor({c.conv2_kernel, c.conv2_kernel, c.conv1_filters, c.conv2_filters});
  conv2_b = Tensor({c.conv2_filters});
  transform = Tensor({c.num_primary(), c.num_classes, c.class_dim, c.primary_dim});

  Rng rng(seed, 0x6361707331ULL);
  const double fan1 = static_cast<double>(c.conv1_kernel * c.conv1_kernel * c.channels);
  const double fan2 = static_cast<double>(c.conv2_kernel * c.conv2_kernel * c.conv1_filters);
  fill_normal(conv1_w, c.conv_init_gain * std::sqrt(2.0 / fan1), rng);
  fill_normal(conv2_w, c.conv_init_gain * std::sqrt(2.0 / fan2), rng);
  fill_normal(transform, c.transform_init_std, rng);
}

std::vector<ParamRef> CapsNetModel::params() {
  return {{"conv1/w", &conv1_w}, {"conv1/b", &conv1_b}, {"conv2/w", &conv2_w},
          {"conv2/b", &conv2_b}, {"caps/w", &transform}};
}

std::vector<ConstParamRef> CapsNetModel::params() const {
  return {{"conv1/w", &conv1_w}, {"conv1/b", &conv1_b}, {"conv2/w", &conv2_w},
          {"conv2/b", &conv2_b}, {"caps/w", &transform}};
}

ModelGradients CapsNetModel::zero_gradients() const {
  return {Tensor(conv1_w.shape()), Tensor(conv1_b.shape()), Tensor(conv2_w.shape()),
          Tensor(conv2_b.shape()), Tensor(transform.shape()), Tensor()};
}

CapsForward CapsNetModel::forward(const Tensor& batch, bool training, std::uint64_t seed,
                                  std::size_t first_sample) const {
  const auto& c = config_;
  const Shape expected_tail{c.input_size, c.input_size, c.channels};
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != expected_tail) {
    throw ShapeError("forward: expected batch [N," + std::to_string(c.input_size) + "," +
                     std::to_string(c.input_size) + "," + std::to_string(c.channels) + "], got " +
                     shape_string(batch.shape()));
  }
  const std::size_t n = batch.dim(0);
  CapsForward f;
  f.training = training;
  f.input = batch;
  f.conv1_pre = ops::conv2d_forward(batch, conv1_w, conv1_b, {1, 0});
  f.conv1_act = ops::relu_forward(f.conv1_pre);
  auto drop = ops::dropout_forward(f.conv1_act, c.dropout_rate, seed, training, first_sample);
  f.conv1_out = std::move(drop.output);
  f.dropout_mask = std::move(drop.mask);
  f.primary_pre = ops::conv2d_forward(f.conv1_out, conv2_w, conv2_b, {c.conv2_stride, 0});
  f.primary_pre.reshape({n, c.num_primary(), c.primary_dim});
  f.primary = capsule::squash(f.primary_pre);
  f.u_hat = capsule::predict_vectors(f.primary, transform);
  auto routed = capsule::route(f.u_hat, c.routing_iters);
  f.v = std::move(routed.v);
  f.routing = std::move(routed.state);
  f.lengths = ops::l2_norm(f.v, 2);
  return f;
}

ModelGradients CapsNetModel::backward(const CapsForward& fwd, const Tensor& grad_v,
                                      const Tensor& grad_lengths, bool want_input_grad) const {
  if (fwd.u_hat.empty() || fwd.routing.iterations == 0 || fwd.conv1_pre.empty()) {
    throw std::invalid_argument("backward: forward caches are missing");
  }
  const auto& c = config_;
  const std::size_t n = fwd.input.dim(0);
  Tensor gv(fwd.v.shape());
  if (!grad_v.empty()) {
    require_same_shape(grad_v, fwd.v, "backward grad_v");
    gv = grad_v;
  }
  if (!grad_lengths.empty()) {
    require_same_shape(grad_lengths, fwd.lengths, "backward grad_lengths");
    gv = ops::add(gv, ops::l2_norm_backward(grad_lengths, fwd.v, fwd.lengths, 2));
  }

  ModelGradients g;
  Tensor g_uhat = capsule::route_backward(fwd.u_hat, fwd.routing, gv);
  auto pg = capsule::predict_vectors_backward(g_uhat, fwd.primary, transform);
  g.transform = std::move(pg.weights);
  Tensor g_pre = capsule::squash_backward(fwd.primary_pre, pg.u);
  const std::size_t side2 = c.conv2_output_size();
  g_pre.reshape({n, side2, side2, c.conv2_filters});
  auto g2 = ops::conv2d_backward(g_pre, fwd.conv1_out, conv2_w, {c.conv2_stride, 0});
  g.conv2_w = std::move(g2.filters);
  g.conv2_b = std::move(g2.bias);
  Tensor g_act = ops::dropout_backward(g2.input, fwd.dropout_mask);
  Tensor g_c1 = ops::relu_backward(g_act, fwd.conv1_pre);
  auto g1 = ops::conv2d_backward(g_c1, fwd.input, conv1_w, {1, 0}, want_input_grad);
  g.conv1_w = std::move(g1.filters);
  g.conv1_b = std::move(g1.bias);
  g.input = std::move(g1.input);
  return g;
}

std::vector<int> argmax_lengths(const Tensor& lengths) {
  require_rank(lengths.shape(), 2, "argmax_lengths [N,J]");
  const std::size_t n = lengths.dim(0), j = lengths.dim(1);
  std::vector<int> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < j; ++k) {
      if (lengths[s * j + k] > lengths[s * j + best]) best = k;
    }
    out[s] = static_cast<int>(best);
  }
  return out;
}

}  // namespace capsnet
