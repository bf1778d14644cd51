#include "capsnet/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace capsnet {
namespace {

void check_pairs(std::span<const ParamRef> params, std::span<const ConstParamRef> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i].value, *grads[i].value, "optimizer parameter/gradient");
  }
}

}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

void sgd_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, double lr) {
  check_pairs(params, grads);
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].value;
    const Tensor& g = *grads[i].value;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
}

void adam_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads,
               AdamState& state, double lr, const AdamConfig& cfg) {
  check_pairs(params, grads);
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state does not match parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].value;
    const Tensor& g = *grads[i].value;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    require_same_shape(p, m, "adam state");
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      if (lr != 0.0) p[k] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

void Optimizer::step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, double lr) {
  if (kind_ == OptimizerKind::kAdam) {
    adam_step(params, grads, adam_, lr, adam_cfg_);
  } else {
    sgd_step(params, grads, lr);
  }
}

}  // namespace capsnet
