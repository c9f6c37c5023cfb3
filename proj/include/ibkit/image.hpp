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

#pragma once

// RGB images with double channels in [0, 1], plus PNG / PPM (P3) I/O.
// Saving quantises to 1/255 steps; loading returns exact k/255 values.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ibkit {

class Image {
 public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;
  /// Throws ValueError for a zero dimension.
  Image(std::size_t height, std::size_t width, double fill = 0.0);

  static Image constant(std::size_t height, std::size_t width, double r, double g, double b);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return height_ * width_; }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return pixels_[(y * width_ + x) * kChannels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return pixels_[(y * width_ + x) * kChannels + c];
  }
  /// Edge-clamped lookup for signed coordinates.
  double clamped(long y, long x, std::size_t c) const noexcept;
  /// Bilinear sample at real coordinates, edge-clamped.
  double bilinear(double y, double x, std::size_t c) const noexcept;

  std::vector<double>& pixels() noexcept { return pixels_; }
  const std::vector<double>& pixels() const noexcept { return pixels_; }

  bool same_shape(const Image& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_;
  }
  void clamp() noexcept;
  bool operator==(const Image& o) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

Image flip_horizontal(const Image& img);
/// Round every channel to the nearest k/255.
Image quantize8(const Image& img);
/// FNV-1a over the raw bytes of the pixel buffer.
std::uint64_t image_hash(const Image& img) noexcept;

void save_png(const std::filesystem::path& path, const Image& img);
Image load_png(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const Image& img);
Image load_ppm(const std::filesystem::path& path);
/// Dispatches on the extension (.png or .ppm); throws ValueError otherwise.
void save_image(const std::filesystem::path& path, const Image& img);
Image load_image(const std::filesystem::path& path);

/// Deterministic 64x64 test card: colour ramps, a checker patch, discs and
/// fine stripes, so every corruption family has structure to damage.
Image reference_image();

}  // namespace ibkit
