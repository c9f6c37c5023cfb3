// Copyright 2026 The IBKit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ibkit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ibkit/errors.hpp"

namespace ibkit {

Image::Image(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), pixels_(height * width * kChannels, fill) {
  if (height == 0 || width == 0) throw ValueError("image dimensions must be positive");
}

Image Image::constant(std::size_t height, std::size_t width, double r, double g, double b) {
  Image img(height, width);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    img.pixels_[p * 3] = r;
    img.pixels_[p * 3 + 1] = g;
    img.pixels_[p * 3 + 2] = b;
  }
  return img;
}

double Image::clamped(long y, long x, std::size_t c) const noexcept {
  const long yy = std::clamp(y, 0L, static_cast<long>(height_) - 1);
  const long xx = std::clamp(x, 0L, static_cast<long>(width_) - 1);
  return at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
}

double Image::bilinear(double y, double x, std::size_t c) const noexcept {
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double top = (1.0 - tx) * clamped(y0, x0, c) + tx * clamped(y0, x0 + 1, c);
  const double bot = (1.0 - tx) * clamped(y0 + 1, x0, c) + tx * clamped(y0 + 1, x0 + 1, c);
  return (1.0 - ty) * top + ty * bot;
}

void Image::clamp() noexcept {
  for (double& v : pixels_) v = std::clamp(v, 0.0, 1.0);
}

Image flip_horizontal(const Image& img) {
  Image out = img;
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, img.width() - 1 - x, c) = img.at(y, x, c);
  return out;
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.pixels()) v = to_byte(v) / 255.0;
  return out;
}

std::uint64_t image_hash(const Image& img) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(img.pixels().data());
  for (std::size_t i = 0; i < img.pixels().size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  h ^= img.height() * 0x9e3779b97f4a7c15ULL + img.width();
  return h;
}

// ---------------------------------------------------------------------------

void save_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> buf(img.pixels().size());
  std::transform(img.pixels().begin(), img.pixels().end(), buf.begin(), to_byte);
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.width());
  desc.height = static_cast<png_uint_32>(img.height());
  desc.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&desc, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw ValueError("cannot write PNG '" + path.string() + "': " + desc.message);
  }
}

Image load_png(const std::filesystem::path& path) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.string().c_str())) {
    throw ValueError("cannot read PNG '" + path.string() + "': " + desc.message);
  }
  desc.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = desc.message;
    png_image_free(&desc);
    throw ValueError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  Image img(desc.height, desc.width);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels()[i] = buf[i] / 255.0;
  return img;
}

void save_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path);
  if (!out) throw ValueError("cannot open '" + path.string() + "' for writing");
  out << "P3\n" << img.width() << ' ' << img.height() << "\n255\n";
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out << static_cast<int>(to_byte(img.at(y, x, c))) << (c == 2 ? '\n' : ' ');
      }
    }
  }
  if (!out) throw ValueError("failed writing '" + path.string() + "'");
}

Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open '" + path.string() + "'");
  // Strip comments first, then read whitespace-separated tokens.
  std::stringstream clean;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    clean << line.substr(0, hash) << '\n';
  }
  std::string magic;
  long width = 0, height = 0, maxval = 0;
  clean >> magic >> width >> height >> maxval;
  if (magic != "P3") throw ValueError("'" + path.string() + "' is not an ASCII PPM (P3)");
  if (!clean || width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    throw ValueError("malformed PPM header in '" + path.string() + "'");
  }
  Image img(static_cast<std::size_t>(height), static_cast<std::size_t>(width));
  for (double& v : img.pixels()) {
    long s = -1;
    if (!(clean >> s) || s < 0 || s > maxval) {
      throw ValueError("truncated or out-of-range PPM sample in '" + path.string() + "'");
    }
    v = static_cast<double>(s) / static_cast<double>(maxval);
  }
  return img;
}

namespace {

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) {
    return static_cast<char>(std::tolower(ch));
  });
  return ext;
}

}  // namespace

void save_image(const std::filesystem::path& path, const Image& img) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return save_png(path, img);
  if (ext == ".ppm") return save_ppm(path, img);
  throw ValueError("unsupported image extension '" + ext + "' (use .png or .ppm)");
}

Image load_image(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return load_png(path);
  if (ext == ".ppm") return load_ppm(path);
  throw ValueError("unsupported image extension '" + ext + "' (use .png or .ppm)");
}

// ---------------------------------------------------------------------------

Image reference_image() {
  constexpr std::size_t n = 64;
  constexpr double pi = std::numbers::pi;
  Image img(n, n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double u = static_cast<double>(x) / (n - 1), v = static_cast<double>(y) / (n - 1);
      double r = 0.15 + 0.7 * u;
      double g = 0.2 + 0.6 * v;
      double b = 0.5 + 0.25 * std::sin(2.0 * pi * (u + v));
      if (x >= 40 && y < 24) {  // checker
        const bool on = ((x / 7) + (y / 7)) % 2 == 0;
        r = g = b = on ? 0.9 : 0.1;
      }
      if (y >= 52) {  // fine stripes
        const double s = 0.5 + 0.4 * std::sin(pi * static_cast<double>(x * x) / 96.0);  // chirp
        r = s;
        g = 1.0 - s;
        b = 0.5;
      }
      const double d1 = std::hypot(static_cast<double>(x) - 18.0, static_cast<double>(y) - 20.0);
      if (d1 < 10.0) {
        r = 0.85;
        g = 0.2;
        b = 0.15;
      }
      const double d2 = std::hypot(static_cast<double>(x) - 44.0, static_cast<double>(y) - 38.0);
      if (d2 < 7.0) {
        r = 0.1;
        g = 0.3;
        b = 0.8;
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  img.clamp();
  return img;
}

}  // namespace ibkit
