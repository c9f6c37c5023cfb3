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

// Seeded image corruptions at severities 1..5.
//
// Random draws come from a counter-based generator keyed on (seed, kind,
// draw index), so results do not depend on evaluation order or platform.
// Frost, snow, spatter, glass blur and JPEG are not implemented and are
// rejected by name.

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ibkit/image.hpp"
#include "ibkit/tensor.hpp"

namespace ibkit {

enum class CorruptionKind {
  gaussian_noise,
  shot_noise,
  impulse_noise,
  speckle_noise,
  gaussian_blur,
  defocus_blur,
  motion_blur,
  zoom_blur,
  fog,
  contrast,
  brightness,
  saturate,
  pixelate,
  elastic_transform,
};

inline constexpr int kMinSeverity = 1;
inline constexpr int kMaxSeverity = 5;

const std::vector<CorruptionKind>& all_corruption_kinds();
std::string to_string(CorruptionKind kind);
/// Throws ValueError; out-of-scope names get a dedicated message.
CorruptionKind parse_corruption_kind(const std::string& name);
/// True for kinds whose output depends on the seed.
bool is_stochastic(CorruptionKind kind);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;
  std::uint64_t seed = 0;

  /// Throws ValueError unless severity is in 1..5.
  void validate() const;
};

struct SeverityRow {
  CorruptionKind kind;
  std::vector<std::string> names;   // one per parameter
  std::vector<int> direction;       // +1: larger is more distorting, -1: smaller is
  std::array<std::vector<double>, 5> levels;
};

const std::vector<SeverityRow>& severity_table();
const SeverityRow& severity_row(CorruptionKind kind);
std::vector<double> severity_params(CorruptionKind kind, int severity);

Image corrupt(const Image& image, const CorruptionSpec& spec);
/// Same generators with explicit parameters (e.g. forced to a degenerate value).
/// Throws ValueError if the parameter count does not match the table row.
Image corrupt_with(const Image& image, CorruptionKind kind, const std::vector<double>& params,
                   std::uint64_t seed);

// Kernels (odd square, normalised to sum 1).
Matrix gaussian_kernel(double sigma);
Matrix disk_kernel(double radius);
Matrix motion_kernel(double length, double angle_degrees);
/// Per-channel 2D convolution with edge clamping; the kernel is centred.
Image convolve(const Image& image, const Matrix& kernel);

/// 10 log10(1 / MSE); +inf for identical images. Throws DimensionError on shape mismatch.
double psnr(const Image& a, const Image& b);
inline constexpr double kPsnrCap = 99.0;
/// Value written to reports: min(psnr, 99).
inline double psnr_capped(double db) noexcept { return db > kPsnrCap ? kPsnrCap : db; }

/// Number of corrupt / corrupt_with calls in this process. The training loop
/// checks that it does not move.
std::uint64_t corruption_call_count() noexcept;

/// Diamond-square fractal noise in [0, 1] on a size x size grid (size = 2^k + 1).
Matrix plasma_fractal(std::size_t size, double decay, std::uint64_t seed);

}  // namespace ibkit
