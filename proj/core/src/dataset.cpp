#include "capsnet/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "capsnet/image_io.hpp"
#include "capsnet/parallel.hpp"

namespace capsnet {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "' (expected train or test)");
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

const std::array<std::string, kMaxClasses>& gtsrb_class_names() {
  static const std::array<std::string, kMaxClasses> names{
      "speed_limit_20",        "speed_limit_30",        "speed_limit_50",
      "speed_limit_60",        "speed_limit_70",        "speed_limit_80",
      "end_speed_limit_80",    "speed_limit_100",       "speed_limit_120",
      "no_passing",            "no_passing_over_3.5t",  "right_of_way_next_junction",
      "priority_road",         "yield",                 "stop",
      "no_vehicles",           "over_3.5t_prohibited",  "no_entry",
      "general_caution",       "dangerous_curve_left",  "dangerous_curve_right",
      "double_curve",          "bumpy_road",            "slippery_road",
      "road_narrows_right",    "road_work",             "traffic_signals",
      "pedestrians",           "children_crossing",     "bicycles_crossing",
      "beware_ice_snow",       "wild_animals_crossing", "end_all_limits",
      "turn_right_ahead",      "turn_left_ahead",       "ahead_only",
      "go_straight_or_right",  "go_straight_or_left",   "keep_right",
      "keep_left",             "roundabout_mandatory",  "end_no_passing",
      "end_no_passing_over_3.5t"};
  return names;
}

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset: empty");
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != kImageSize || s[2] != kImageSize) {
    throw std::invalid_argument("dataset: images must be [N,32,32,C], got " + shape_string(s));
  }
  if (s[0] != labels.size()) {
    throw std::invalid_argument("dataset: " + std::to_string(s[0]) + " images but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= kMaxClasses) {
      throw std::invalid_argument("dataset: label " + std::to_string(l) + " outside [0,43)");
    }
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("dataset: pixel value outside [0,1]");
  }
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = kImageSize * kImageSize * channels();
  Tensor out({indices.size(), kImageSize, kImageSize, channels()});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw std::out_of_range("dataset batch index out of range");
    const float* src = images.raw() + indices[b] * per;
    std::copy(src, src + per, out.raw() + b * per);
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

std::string DatasetManifest::render() const {
  std::ostringstream os;
  os << "source=" << source << "\n";
  os << "format_version=" << format_version << "\n";
  os << "split=" << to_string(split) << "\n";
  os << "channels=" << channels << "\n";
  os << "count=" << count << "\n";
  os << "histogram=";
  for (std::size_t k = 0; k < kMaxClasses; ++k) os << (k ? "," : "") << histogram[k];
  os << "\n";
  return os.str();
}

DatasetManifest make_manifest(const Dataset& dataset, std::string source) {
  DatasetManifest m;
  m.count = dataset.size();
  m.split = dataset.split;
  m.channels = dataset.images.empty() ? 0 : dataset.channels();
  m.source = std::move(source);
  for (int l : dataset.labels) ++m.histogram.at(static_cast<std::size_t>(l));
  return m;
}

namespace {

bool parse_label_dir(const std::string& name, int& label) {
  if (name.empty() || name.size() > 6) return false;
  for (char c : name) {
    if (c < '0' || c > '9') return false;
  }
  label = std::stoi(name);
  return true;
}

std::string lower_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

void convert_channels(Image& img, std::size_t channels, const fs::path& path) {
  if (img.channels == channels) return;
  Image out{img.width, img.height, channels, std::vector<float>(img.width * img.height * channels)};
  for (std::size_t p = 0; p < img.width * img.height; ++p) {
    if (channels == 1) {
      const float* px = img.pixels.data() + p * 3;
      out.pixels[p] = std::clamp(0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2], 0.0f, 1.0f);
    } else if (img.channels == 1) {
      for (std::size_t c = 0; c < channels; ++c) out.pixels[p * channels + c] = img.pixels[p];
    } else {
      throw std::runtime_error("cannot convert " + path.string() + " to " + std::to_string(channels) +
                               " channels");
    }
  }
  img = std::move(out);
}

}  // namespace

FloatTensor load_sample_image(const fs::path& path, const LoadOptions& options) {
  if (options.channels != 1 && options.channels != 3) {
    throw std::invalid_argument("load_sample_image: channels must be 1 or 3");
  }
  Image img = read_pnm(path);
  if (img.width != kImageSize || img.height != kImageSize) {
    if (!options.resize_bilinear) {
      throw std::runtime_error("image " + path.string() + " is " + std::to_string(img.width) + "x" +
                               std::to_string(img.height) + ", expected 32x32 (use --resize bilinear)");
    }
    img = resize_bilinear(img, kImageSize, kImageSize);
  }
  convert_channels(img, options.channels, path);
  FloatTensor out({kImageSize, kImageSize, options.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), out.raw());
  return out;
}

Dataset load_image_directory(const fs::path& root, const LoadOptions& options) {
  if (options.channels != 1 && options.channels != 3) {
    throw std::invalid_argument("load_image_directory: channels must be 1 or 3");
  }
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  struct Entry {
    fs::path path;
    int label;
  };
  std::vector<Entry> entries;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    int label = -1;
    const std::string name = dir.path().filename().string();
    if (!parse_label_dir(name, label)) {
      throw std::runtime_error("class directory '" + dir.path().string() + "' is not an integer label");
    }
    if (label < 0 || static_cast<std::size_t>(label) >= kMaxClasses) {
      throw std::runtime_error("class directory '" + dir.path().string() + "' label " +
                               std::to_string(label) + " outside [0,43)");
    }
    for (const auto& file : fs::directory_iterator(dir.path())) {
      if (!file.is_regular_file()) continue;
      const std::string ext = lower_ext(file.path());
      if (ext == ".ppm" || ext == ".pgm") {
        entries.push_back({file.path(), label});
      } else if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") {
        throw std::runtime_error("unsupported image format (convert to PPM): " + file.path().string());
      }
    }
  }
  if (entries.empty()) throw std::runtime_error("no images found under " + root.string());
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.path < b.path; });

  Dataset ds;
  ds.split = options.split;
  ds.class_names.assign(gtsrb_class_names().begin(), gtsrb_class_names().end());
  const std::size_t per = kImageSize * kImageSize * options.channels;
  ds.images = FloatTensor({entries.size(), kImageSize, kImageSize, options.channels});
  ds.labels.resize(entries.size());
  parallel_for(entries.size(), [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t i = begin; i < end; ++i) {
      const FloatTensor img = load_sample_image(entries[i].path, options);
      std::copy(img.raw(), img.raw() + per, ds.images.raw() + i * per);
      ds.labels[i] = entries[i].label;
    }
  });
  ds.validate();
  return ds;
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const fs::path& path, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != sizeof(T)) throw FormatError("truncated dataset file " + path.string() + " reading " + what);
  return v;
}

}  // namespace

void save_binary(const Dataset& dataset, const fs::path& path) {
  dataset.validate();
  if (dataset.channels() > 255) throw std::invalid_argument("save_binary: too many channels");
  if (dataset.size() > UINT32_MAX) throw std::invalid_argument("save_binary: too many images");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("CAPS", 4);
  put<std::uint16_t>(out, kDatasetFormatVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dataset.channels()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.size()));
  out.write(reinterpret_cast<const char*>(dataset.images.raw()),
            static_cast<std::streamsize>(dataset.images.size() * sizeof(float)));
  for (int l : dataset.labels) put<std::uint16_t>(out, static_cast<std::uint16_t>(l));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset load_binary(const fs::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "CAPS", 4) != 0) {
    throw FormatError("bad magic in " + path.string() + " (expected CAPS)");
  }
  const auto version = get<std::uint16_t>(in, path, "version");
  if (version != kDatasetFormatVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version) + " in " + path.string());
  }
  const auto channels = get<std::uint8_t>(in, path, "channels");
  const auto count = get<std::uint32_t>(in, path, "count");
  if (channels == 0 || count == 0) throw FormatError("empty dataset header in " + path.string());
  const auto expected = static_cast<std::uintmax_t>(kDatasetHeaderBytes) +
                        std::uintmax_t{count} * kImageSize * kImageSize * channels * 4 + std::uintmax_t{count} * 2;
  const auto actual = fs::file_size(path);
  if (actual < expected) {
    throw FormatError("truncated dataset file " + path.string() + ": " + std::to_string(actual) +
                      " bytes, expected " + std::to_string(expected));
  }
  if (actual > expected) {
    throw FormatError("dataset file " + path.string() + " has " + std::to_string(actual - expected) +
                      " trailing bytes");
  }
  Dataset ds;
  ds.split = split;
  ds.class_names.assign(gtsrb_class_names().begin(), gtsrb_class_names().end());
  ds.images = FloatTensor({count, kImageSize, kImageSize, channels});
  in.read(reinterpret_cast<char*>(ds.images.raw()), static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  ds.labels.resize(count);
  for (auto& l : ds.labels) l = get<std::uint16_t>(in, path, "labels");
  ds.validate();
  return ds;
}

}  // namespace capsnet
