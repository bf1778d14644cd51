#pragma once

#include <cstdint>

#include "capsnet/dataset.hpp"
#include "capsnet/tensor.hpp"

namespace capsnet {

struct AugmentConfig {
  double brightness_min = 0.6;
  double brightness_max = 1.5;
  double contrast_min = 0.6;
  double contrast_max = 1.5;
  /// Rotation drawn from [-rotation_deg, rotation_deg].
  double rotation_deg = 20.0;
  double shear = 0.2;
  /// Horizontal shift as a fraction of the image width.
  double width_shift = 0.2;
  double height_shift = 0.0;
  bool horizontal_flip = true;
  std::size_t replication_factor = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AffineParams {
  double rotation_deg = 0.0;
  double shear = 0.0;
  double dx_frac = 0.0;
  double dy_frac = 0.0;
  bool flip = false;
};

/// Images here are single [H, W, C] tensors with values in [0, 1].
FloatTensor adjust_brightness(const FloatTensor& image, double factor);
/// Scales each channel's deviation from its own mean.
FloatTensor adjust_contrast(const FloatTensor& image, double factor);
/// Inverse-mapped affine about the image center: flip, then shear, then
/// rotation, then shift. Bilinear sampling; out-of-range samples take the
/// nearest edge pixel.
FloatTensor affine_transform(const FloatTensor& image, const AffineParams& params);

/// Grows a training split by replication_factor. Output index i*F + c holds
/// copy c of input image i: copy 0 gets photometric jitter only, later copies
/// additionally a random affine transform.
Dataset augment_dataset(const Dataset& dataset, const AugmentConfig& config);

}  // namespace capsnet
