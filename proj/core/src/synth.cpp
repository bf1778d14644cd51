#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "capsnet/dataset.hpp"
#include "capsnet/random.hpp"

namespace capsnet {
namespace {

enum class Outline { kCircle, kTriangleUp, kTriangleDown, kSquare, kDiamond };
enum class Glyph { kNone, kHorizontalBar, kVerticalBar };

struct ClassStyle {
  Outline outline;
  std::array<double, 3> border;
  Glyph glyph;
};

// Outline and border color cycle with coprime periods 5 and 3, so the first
// 15 classes differ in both; the glyph separates the remaining ones.
ClassStyle style_for(std::size_t k) {
  static constexpr std::array<std::array<double, 3>, 3> kBorders{
      {{0.85, 0.10, 0.10}, {0.10, 0.25, 0.85}, {0.95, 0.80, 0.10}}};
  return {static_cast<Outline>(k % 5), kBorders[k % 3], static_cast<Glyph>((k / 15) % 3)};
}

// Inside test in sign-local coordinates scaled so the outline sits at radius t.
bool inside(Outline o, double x, double y, double t) {
  constexpr double kSqrt3 = 1.7320508075688772;
  switch (o) {
    case Outline::kCircle:
      return x * x + y * y <= t * t;
    case Outline::kSquare:
      return std::max(std::abs(x), std::abs(y)) <= 0.82 * t;
    case Outline::kDiamond:
      return std::abs(x) + std::abs(y) <= t;
    case Outline::kTriangleUp:
      return y <= 0.5 * t && y >= -t + kSqrt3 * std::abs(x);
    case Outline::kTriangleDown:
      return -y <= 0.5 * t && -y >= -t + kSqrt3 * std::abs(x);
  }
  return false;
}

bool on_glyph(Glyph g, double x, double y) {
  switch (g) {
    case Glyph::kNone:
      return false;
    case Glyph::kHorizontalBar:
      return std::abs(y) < 0.14 && std::abs(x) < 0.42;
    case Glyph::kVerticalBar:
      return std::abs(x) < 0.14 && std::abs(y) < 0.42;
  }
  return false;
}

}  // namespace

Dataset synthesize_toy_dataset(std::size_t num_classes, std::size_t per_class, std::uint64_t seed,
                               Split split, std::size_t channels) {
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw std::invalid_argument("synthesize_toy_dataset: num_classes must be in [2, 43]");
  }
  if (per_class < 1) throw std::invalid_argument("synthesize_toy_dataset: per_class must be >= 1");
  if (channels != 1 && channels != 3) throw std::invalid_argument("synthesize_toy_dataset: channels must be 1 or 3");

  const std::size_t n = num_classes * per_class;
  Dataset ds;
  ds.split = split;
  ds.class_names.assign(gtsrb_class_names().begin(), gtsrb_class_names().end());
  ds.images = FloatTensor({n, kImageSize, kImageSize, channels});
  ds.labels.resize(n);
  constexpr double kCenter = (kImageSize - 1) / 2.0;
  constexpr int kSuper = 2;

  for (std::size_t idx = 0; idx < n; ++idx) {
    const std::size_t k = idx % num_classes;
    ds.labels[idx] = static_cast<int>(k);
    const ClassStyle style = style_for(k);
    Rng rng(seed, idx);
    const std::array<double, 3> background{rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6)};
    const double radius = rng.uniform(0.72, 0.95) * 14.0;
    const double cx = kCenter + rng.uniform(-2.0, 2.0);
    const double cy = kCenter + rng.uniform(-2.0, 2.0);
    const double angle = rng.uniform(-12.0, 12.0) * std::numbers::pi / 180.0;
    const double brightness = rng.uniform(0.7, 1.1);
    const double ca = std::cos(angle), sa = std::sin(angle);

    for (std::size_t py = 0; py < kImageSize; ++py) {
      for (std::size_t px = 0; px < kImageSize; ++px) {
        std::array<double, 3> acc{};
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double ox = static_cast<double>(px) + (sx + 0.5) / kSuper - 0.5 - cx;
            const double oy = static_cast<double>(py) + (sy + 0.5) / kSuper - 0.5 - cy;
            const double lx = (ca * ox + sa * oy) / radius;
            const double ly = (-sa * ox + ca * oy) / radius;
            std::array<double, 3> color = background;
            if (inside(style.outline, lx, ly, 1.0)) {
              color = style.border;
              if (inside(style.outline, lx, ly, 0.68)) {
                color = on_glyph(style.glyph, lx, ly) ? std::array<double, 3>{0.05, 0.05, 0.05}
                                                      : std::array<double, 3>{0.95, 0.95, 0.95};
              }
            }
            for (int c = 0; c < 3; ++c) acc[c] += color[c];
          }
        }
        const double noise = rng.uniform(-0.04, 0.04);
        float* out = ds.images.raw() + (py * kImageSize + px) * channels + idx * kImageSize * kImageSize * channels;
        std::array<double, 3> rgb{};
        for (int c = 0; c < 3; ++c) {
          rgb[c] = std::clamp(acc[c] / (kSuper * kSuper) * brightness + noise, 0.0, 1.0);
        }
        if (channels == 1) {
          out[0] = static_cast<float>(std::clamp(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2], 0.0, 1.0));
        } else {
          for (int c = 0; c < 3; ++c) out[c] = static_cast<float>(rgb[c]);
        }
      }
    }
  }
  return ds;
}

}  // namespace capsnet
