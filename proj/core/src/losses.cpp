#include "capsnet/losses.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace capsnet {

void LossConfig::validate() const {
  if (!(0.0 < m_minus && m_minus < m_plus && m_plus < 1.0)) {
    throw std::invalid_argument("loss config: need 0 < m_minus < m_plus < 1");
  }
  if (lambda_margin < 0.0) throw std::invalid_argument("loss config: lambda_margin must be >= 0");
  if (lambda_recon < 0.0) throw std::invalid_argument("loss config: lambda_recon must be >= 0");
  if (recon_sign != 1.0 && recon_sign != -1.0) {
    throw std::invalid_argument("loss config: recon_sign must be +1 or -1");
  }
}

LossValue margin_loss(const Tensor& lengths, std::span<const int> labels, const LossConfig& cfg) {
  require_rank(lengths.shape(), 2, "margin_loss lengths [N,J]");
  const std::size_t n = lengths.dim(0), j = lengths.dim(1);
  if (labels.size() != n) {
    throw ShapeError("margin_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  }
  LossValue out{0.0, Tensor(lengths.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t s = 0; s < n; ++s) {
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= j) {
      throw std::invalid_argument("margin_loss: label " + std::to_string(label) + " outside [0," +
                                  std::to_string(j) + ")");
    }
    double sample = 0.0;
    for (std::size_t k = 0; k < j; ++k) {
      const double len = lengths[s * j + k];
      double& g = out.grad[s * j + k];
      if (static_cast<std::size_t>(label) == k) {
        const double gap = std::max(0.0, cfg.m_plus - len);
        sample += gap * gap;
        g = -2.0 * gap * inv_n;
      } else {
        const double gap = std::max(0.0, len - cfg.m_minus);
        sample += cfg.lambda_margin * gap * gap;
        g = 2.0 * cfg.lambda_margin * gap * inv_n;
      }
    }
    out.value += sample;
  }
  out.value *= inv_n;
  return out;
}

LossValue reconstruction_loss(const Tensor& input, const Tensor& recon) {
  require_same_shape(input, recon, "reconstruction_loss");
  const std::size_t n = input.dim(0);
  const double inv_n = 1.0 / static_cast<double>(n);
  LossValue out{0.0, Tensor(input.shape())};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double diff = input[i] - recon[i];
    out.value += diff * diff;
    out.grad[i] = -2.0 * diff * inv_n;
  }
  out.value *= inv_n;
  return out;
}

double final_loss(double margin, double recon, const LossConfig& cfg) {
  return margin + cfg.recon_sign * cfg.lambda_recon * recon;
}

}  // namespace capsnet
