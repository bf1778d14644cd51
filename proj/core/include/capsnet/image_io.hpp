#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace capsnet {

/// Row-major HWC image with float samples in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;
};

/// Reads binary PPM (P6) or PGM (P5), maxval up to 65535.
/// Throws std::runtime_error naming the file on any decode failure.
Image read_pnm(const std::filesystem::path& path);

/// Writes a P6 file; single-channel images are replicated to gray RGB.
void write_ppm(const std::filesystem::path& path, const Image& image);

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);

}  // namespace capsnet
