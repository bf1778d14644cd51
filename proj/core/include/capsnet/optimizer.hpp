#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capsnet/model.hpp"
#include "capsnet/tensor.hpp"

namespace capsnet {

enum class OptimizerKind { kAdam, kSgd };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// p -= lr * g for each pair.
void sgd_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, double lr);

struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Bias-corrected Adam. State tensors are created on the first call.
void adam_step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads,
               AdamState& state, double lr, const AdamConfig& cfg = {});

class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::kAdam, AdamConfig adam = {})
      : kind_(kind), adam_cfg_(adam) {}

  OptimizerKind kind() const noexcept { return kind_; }
  void step(std::span<const ParamRef> params, std::span<const ConstParamRef> grads, double lr);

  AdamState& adam_state() noexcept { return adam_; }
  const AdamState& adam_state() const noexcept { return adam_; }

 private:
  OptimizerKind kind_;
  AdamConfig adam_cfg_;
  AdamState adam_;
};

}  // namespace capsnet
