#pragma once

#include <span>

#include "capsnet/tensor.hpp"

namespace capsnet {

struct LossConfig {
  double m_plus = 0.9;
  double m_minus = 0.1;
  /// Down-weights the absent-class term of the margin loss.
  double lambda_margin = 0.5;
  /// Weight of the reconstruction loss in the final loss.
  double lambda_recon = 0.0005;
  /// +1 adds the weighted reconstruction loss; -1 subtracts it.
  double recon_sign = 1.0;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  Tensor grad;
};

/// Batch mean of sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2.
/// lengths: [N, J]. The gradient is w.r.t. lengths and includes the 1/N.
LossValue margin_loss(const Tensor& lengths, std::span<const int> labels, const LossConfig& cfg);

/// Batch mean of the per-image sum of squared pixel differences. The gradient
/// is w.r.t. recon: -2 (input - recon) / N.
LossValue reconstruction_loss(const Tensor& input, const Tensor& recon);

double final_loss(double margin, double recon, const LossConfig& cfg);

}  // namespace capsnet
