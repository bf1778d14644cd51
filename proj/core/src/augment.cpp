#include "capsnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "capsnet/parallel.hpp"
#include "capsnet/random.hpp"

namespace capsnet {

void AugmentConfig::validate() const {
  if (!(brightness_min > 0.0 && brightness_min <= brightness_max)) {
    throw std::invalid_argument("augment: brightness range must be positive and ordered");
  }
  if (!(contrast_min > 0.0 && contrast_min <= contrast_max)) {
    throw std::invalid_argument("augment: contrast range must be positive and ordered");
  }
  if (rotation_deg < 0.0 || shear < 0.0 || width_shift < 0.0 || height_shift < 0.0) {
    throw std::invalid_argument("augment: affine ranges must be non-negative");
  }
  if (replication_factor < 1) throw std::invalid_argument("augment: replication_factor must be >= 1");
}

namespace {

void require_image(const FloatTensor& image) {
  require_rank(image.shape(), 3, "augment image [H,W,C]");
}

void require_factor(double factor, const char* what) {
  if (!(factor > 0.0)) throw std::invalid_argument(std::string(what) + ": factor must be positive");
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

FloatTensor adjust_brightness(const FloatTensor& image, double factor) {
  require_image(image);
  require_factor(factor, "adjust_brightness");
  FloatTensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = clamp01(image[i] * factor);
  return out;
}

FloatTensor adjust_contrast(const FloatTensor& image, double factor) {
  require_image(image);
  require_factor(factor, "adjust_contrast");
  const std::size_t c = image.dim(2);
  const std::size_t pixels = image.dim(0) * image.dim(1);
  std::vector<double> mean(c, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < c; ++k) mean[k] += image[p * c + k];
  }
  for (auto& m : mean) m /= static_cast<double>(pixels);
  FloatTensor out(image.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      const double v = image[p * c + k];
      out[p * c + k] = clamp01(mean[k] + factor * (v - mean[k]));
    }
  }
  return out;
}

FloatTensor affine_transform(const FloatTensor& image, const AffineParams& params) {
  require_image(image);
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double tx = params.dx_frac * static_cast<double>(w);
  const double ty = params.dy_frac * static_cast<double>(h);
  const double max_x = static_cast<double>(w - 1), max_y = static_cast<double>(h - 1);

  FloatTensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double qx = static_cast<double>(x) - cx - tx;
      double qy = static_cast<double>(y) - cy - ty;
      // undo rotation
      const double rx = cs * qx + sn * qy;
      const double ry = -sn * qx + cs * qy;
      qx = rx - params.shear * ry;
      qy = ry;
      if (params.flip) qx = -qx;
      const double sx = std::clamp(qx + cx, 0.0, max_x);
      const double sy = std::clamp(qy + cy, 0.0, max_y);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double wx = sx - static_cast<double>(x0);
      const double wy = sy - static_cast<double>(y0);
      for (std::size_t k = 0; k < c; ++k) {
        auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(image[(yy * w + xx) * c + k]); };
        const double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
        const double bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
        out[(y * w + x) * c + k] = clamp01(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Dataset augment_dataset(const Dataset& dataset, const AugmentConfig& config) {
  config.validate();
  if (dataset.split != Split::kTrain) {
    throw std::invalid_argument("augment_dataset: refusing to augment a test split");
  }
  dataset.validate();
  const std::size_t n = dataset.size();
  const std::size_t factor = config.replication_factor;
  const std::size_t c = dataset.channels();
  const std::size_t per = kImageSize * kImageSize * c;

  Dataset out;
  out.split = dataset.split;
  out.class_names = dataset.class_names;
  out.images = FloatTensor({n * factor, kImageSize, kImageSize, c});
  out.labels.resize(n * factor);

  parallel_for(n, [&](std::size_t begin, std::size_t end, std::size_t) {
    FloatTensor src({kImageSize, kImageSize, c});
    for (std::size_t i = begin; i < end; ++i) {
      std::copy(dataset.images.raw() + i * per, dataset.images.raw() + (i + 1) * per, src.raw());
      Rng rng(config.seed, i);
      for (std::size_t copy = 0; copy < factor; ++copy) {
        const double b = rng.uniform(config.brightness_min, config.brightness_max);
        const double ct = rng.uniform(config.contrast_min, config.contrast_max);
        FloatTensor img = adjust_contrast(adjust_brightness(src, b), ct);
        if (copy > 0) {
          AffineParams ap;
          ap.rotation_deg = rng.uniform(-config.rotation_deg, config.rotation_deg);
          ap.shear = rng.uniform(-config.shear, config.shear);
          ap.dx_frac = rng.uniform(-config.width_shift, config.width_shift);
          ap.dy_frac = rng.uniform(-config.height_shift, config.height_shift);
          ap.flip = config.horizontal_flip && rng.bernoulli(0.5);
          img = affine_transform(img, ap);
        }
        const std::size_t o = i * factor + copy;
        std::copy(img.raw(), img.raw() + per, out.images.raw() + o * per);
        out.labels[o] = dataset.labels[i];
      }
    }
  });
  return out;
}

}  // namespace capsnet
