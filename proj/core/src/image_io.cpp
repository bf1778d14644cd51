#include "capsnet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace capsnet {
namespace {

std::runtime_error decode_error(const std::filesystem::path& path, const std::string& why) {
  return std::runtime_error("cannot decode image " + path.string() + ": " + why);
}

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path, const char* field) {
  const std::string tok = header_token(in);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw decode_error(path, std::string("bad ") + field + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw decode_error(path, "unreadable");
  const std::string magic = header_token(in);
  if (magic != "P6" && magic != "P5") throw decode_error(path, "unsupported magic '" + magic + "'");
  Image img;
  img.channels = magic == "P6" ? 3 : 1;
  img.width = header_number(in, path, "width");
  img.height = header_number(in, path, "height");
  const std::size_t maxval = header_number(in, path, "maxval");
  if (img.width == 0 || img.height == 0) throw decode_error(path, "zero dimension");
  if (maxval == 0 || maxval > 65535) throw decode_error(path, "maxval out of range");
  const std::size_t count = img.width * img.height * img.channels;
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(count * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw decode_error(path, "truncated pixel data");
  img.pixels.resize(count);
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t v = bytes_per == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
    if (v > maxval) throw decode_error(path, "sample exceeds maxval");
    img.pixels[i] = static_cast<float>(static_cast<double>(v) * inv);
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("write_ppm: need 1 or 3 channels, got " + std::to_string(image.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.width * image.height * 3);
  for (std::size_t p = 0; p < image.width * image.height; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = image.pixels[p * image.channels + (image.channels == 1 ? 0 : c)];
      raw[p * 3 + c] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height) {
  Image out{width, height, image.channels, std::vector<float>(width * height * image.channels)};
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        auto at = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(image.pixels[(yy * image.width + xx) * image.channels + c]);
        };
        const double top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
        const double bot = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
        out.pixels[(y * width + x) * image.channels + c] = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

}  // namespace capsnet
