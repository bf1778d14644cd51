#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "capsnet/tensor.hpp"

namespace capsnet {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kMaxClasses = 43;
inline constexpr std::uint16_t kDatasetFormatVersion = 1;
/// "CAPS" + u16 version + u8 channels + u32 count.
inline constexpr std::size_t kDatasetHeaderBytes = 11;

enum class Split { kTrain, kTest };

Split parse_split(const std::string& name);
std::string to_string(Split split);

/// Names of the 43 GTSRB classes, indexed by label.
const std::array<std::string, kMaxClasses>& gtsrb_class_names();

/// Labeled 32x32 image set. images is [N, 32, 32, C] with values in [0, 1].
struct Dataset {
  FloatTensor images;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  Split split = Split::kTrain;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return images.dim(3); }

  /// Throws std::invalid_argument on any broken invariant.
  void validate() const;

  /// Gathers the listed samples into a [n, 32, 32, C] double batch.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

struct DatasetManifest {
  std::size_t count = 0;
  Split split = Split::kTrain;
  std::size_t channels = 0;
  std::array<std::size_t, kMaxClasses> histogram{};
  std::string source;
  std::uint16_t format_version = kDatasetFormatVersion;

  std::string render() const;
};

DatasetManifest make_manifest(const Dataset& dataset, std::string source);

struct LoadOptions {
  Split split = Split::kTrain;
  /// Resample images that are not 32x32 instead of rejecting them.
  bool resize_bilinear = false;
  /// Output channels; 1 converts color input to luminance.
  std::size_t channels = 3;
};

/// One PPM/PGM file as a [32, 32, C] tensor, resized and channel-converted
/// per `options` (the split field is ignored).
FloatTensor load_sample_image(const std::filesystem::path& path, const LoadOptions& options = {});

/// Reads `<root>/<label>/<image>.ppm` trees. Labels are parsed from the
/// directory names; images are ordered lexicographically by full path.
Dataset load_image_directory(const std::filesystem::path& root, const LoadOptions& options = {});

/// Little-endian layout: "CAPS", u16 version, u8 channels, u32 count, then
/// count*32*32*C f32 pixels, then count u16 labels.
void save_binary(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_binary(const std::filesystem::path& path, Split split = Split::kTrain);

/// Thrown for bad magic, unknown version or truncated dataset files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Procedurally drawn sign-like images: class k gets its own outline shape,
/// border color and inner glyph, with random pose, brightness and background.
/// Deterministic under seed.
Dataset synthesize_toy_dataset(std::size_t num_classes, std::size_t per_class, std::uint64_t seed,
                               Split split = Split::kTrain, std::size_t channels = 3);

}  // namespace capsnet
