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

#include "ibkit/corruptions.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "ibkit/errors.hpp"
#include "ibkit/random.hpp"

namespace ibkit {

namespace {

struct KindName {
  CorruptionKind kind;
  const char* name;
};

constexpr KindName kNames[] = {
    {CorruptionKind::gaussian_noise, "gaussian_noise"},
    {CorruptionKind::shot_noise, "shot_noise"},
    {CorruptionKind::impulse_noise, "impulse_noise"},
    {CorruptionKind::speckle_noise, "speckle_noise"},
    {CorruptionKind::gaussian_blur, "gaussian_blur"},
    {CorruptionKind::defocus_blur, "defocus_blur"},
    {CorruptionKind::motion_blur, "motion_blur"},
    {CorruptionKind::zoom_blur, "zoom_blur"},
    {CorruptionKind::fog, "fog"},
    {CorruptionKind::contrast, "contrast"},
    {CorruptionKind::brightness, "brightness"},
    {CorruptionKind::saturate, "saturate"},
    {CorruptionKind::pixelate, "pixelate"},
    {CorruptionKind::elastic_transform, "elastic_transform"},
};

constexpr const char* kOutOfScope[] = {"frost", "snow", "spatter", "glass_blur",
                                       "jpeg_compression"};

std::atomic<std::uint64_t> g_corruption_calls{0};

std::uint64_t stream_of(CorruptionKind kind) {
  return 0xc0441u * 131u + static_cast<std::uint64_t>(kind);
}

}  // namespace

const std::vector<CorruptionKind>& all_corruption_kinds() {
  static const std::vector<CorruptionKind> kinds = [] {
    std::vector<CorruptionKind> out;
    for (const auto& kn : kNames) out.push_back(kn.kind);
    return out;
  }();
  return kinds;
}

std::string to_string(CorruptionKind kind) {
  for (const auto& kn : kNames)
    if (kn.kind == kind) return kn.name;
  return "unknown";
}

CorruptionKind parse_corruption_kind(const std::string& name) {
  for (const auto& kn : kNames)
    if (name == kn.name) return kn.kind;
  for (const char* skip : kOutOfScope) {
    if (name == skip) {
      throw ValueError("corruption '" + name +
                       "' is out of scope (needs texture assets, a codec, or is excluded for "
                       "cost); see the README section on corruptions");
    }
  }
  std::string known;
  for (const auto& kn : kNames) known += std::string(known.empty() ? "" : ", ") + kn.name;
  throw ValueError("unknown corruption '" + name + "'; expected one of: " + known);
}

bool is_stochastic(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise:
    case CorruptionKind::shot_noise:
    case CorruptionKind::impulse_noise:
    case CorruptionKind::speckle_noise:
    case CorruptionKind::motion_blur:
    case CorruptionKind::fog:
    case CorruptionKind::elastic_transform:
      return true;
    default:
      return false;
  }
}

void CorruptionSpec::validate() const {
  if (severity < kMinSeverity || severity > kMaxSeverity) {
    throw ValueError("severity must be in 1..5, got " + std::to_string(severity));
  }
}

// ---------------------------------------------------------------------------
// Severity constants. Self-chosen for 32x32 and 64x64 images; every column is
// strictly monotone in the direction of more distortion.

const std::vector<SeverityRow>& severity_table() {
  using K = CorruptionKind;
  static const std::vector<SeverityRow> table = {
      {K::gaussian_noise, {"sigma"}, {+1}, {{{0.08}, {0.12}, {0.18}, {0.26}, {0.38}}}},
      {K::shot_noise, {"photons"}, {-1}, {{{60}, {25}, {12}, {5}, {3}}}},
      {K::impulse_noise, {"amount"}, {+1}, {{{0.03}, {0.06}, {0.09}, {0.17}, {0.27}}}},
      {K::speckle_noise, {"sigma"}, {+1}, {{{0.15}, {0.2}, {0.35}, {0.45}, {0.6}}}},
      {K::gaussian_blur, {"sigma"}, {+1}, {{{0.5}, {0.75}, {1.0}, {1.5}, {2.0}}}},
      {K::defocus_blur, {"radius"}, {+1}, {{{1.0}, {1.5}, {2.0}, {2.5}, {3.0}}}},
      {K::motion_blur, {"length"}, {+1}, {{{3}, {5}, {8}, {11}, {15}}}},
      {K::zoom_blur, {"max_zoom"}, {+1}, {{{1.06}, {1.12}, {1.18}, {1.24}, {1.30}}}},
      {K::fog, {"amplitude"}, {+1}, {{{0.4}, {0.6}, {0.8}, {1.0}, {1.3}}}},
      {K::contrast, {"factor"}, {-1}, {{{0.75}, {0.6}, {0.45}, {0.3}, {0.15}}}},
      {K::brightness, {"shift"}, {+1}, {{{0.1}, {0.2}, {0.3}, {0.4}, {0.5}}}},
      {K::saturate, {"gain"}, {+1}, {{{1.5}, {2.0}, {3.0}, {4.0}, {5.0}}}},
      {K::pixelate, {"block"}, {+1}, {{{2}, {3}, {4}, {5}, {6}}}},
      {K::elastic_transform,
       {"alpha", "sigma"},
       {+1, -1},
       {{{0.6, 3.0}, {0.9, 2.6}, {1.2, 2.2}, {1.5, 1.8}, {1.8, 1.4}}}},
  };
  return table;
}

const SeverityRow& severity_row(CorruptionKind kind) {
  for (const auto& row : severity_table())
    if (row.kind == kind) return row;
  throw ValueError("no severity row for kind " + to_string(kind));
}

std::vector<double> severity_params(CorruptionKind kind, int severity) {
  CorruptionSpec{kind, severity, 0}.validate();
  return severity_row(kind).levels[static_cast<std::size_t>(severity - 1)];
}

// ---------------------------------------------------------------------------
// Kernels.

namespace {

Matrix normalised(Matrix k) {
  double total = 0.0;
  for (double v : k.data()) total += v;
  for (double& v : k.data()) v /= total;
  return k;
}

}  // namespace

Matrix gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0)) throw ValueError("gaussian kernel sigma must be >= 0");
  if (sigma == 0.0) return Matrix::scalar(1.0);
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  const std::size_t n = static_cast<std::size_t>(2 * r + 1);
  Matrix k(n, n);
  for (long y = -r; y <= r; ++y)
    for (long x = -r; x <= r; ++x)
      k(static_cast<std::size_t>(y + r), static_cast<std::size_t>(x + r)) =
          std::exp(-static_cast<double>(x * x + y * y) / (2.0 * sigma * sigma));
  return normalised(std::move(k));
}

Matrix disk_kernel(double radius) {
  if (!(radius >= 0.0)) throw ValueError("disk radius must be >= 0");
  // Soft edge: weight is the radial coverage clamp(radius + 0.5 - d, 0, 1).
  const long r = static_cast<long>(std::ceil(radius + 0.5));
  const std::size_t n = static_cast<std::size_t>(2 * r + 1);
  Matrix k(n, n);
  for (long y = -r; y <= r; ++y)
    for (long x = -r; x <= r; ++x) {
      const double d = std::hypot(static_cast<double>(x), static_cast<double>(y));
      k(static_cast<std::size_t>(y + r), static_cast<std::size_t>(x + r)) =
          std::clamp(radius + 0.5 - d, 0.0, 1.0);
    }
  return normalised(std::move(k));
}

Matrix motion_kernel(double length, double angle_degrees) {
  if (!(length >= 1.0)) throw ValueError("motion length must be >= 1");
  const long r = static_cast<long>(std::ceil(length / 2.0));
  const std::size_t n = static_cast<std::size_t>(2 * r + 1);
  Matrix k(n, n);
  const double th = angle_degrees * std::numbers::pi / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const double half = (length - 1.0) / 2.0;
  const int samples = std::max(1, static_cast<int>(std::lround(length * 10.0)));
  // Splat points along the centred segment with bilinear weights.
  for (int s = 0; s <= samples; ++s) {
    const double t = samples == 0 ? 0.0 : -half + 2.0 * half * s / samples;
    const double px = static_cast<double>(r) + t * ct;
    const double py = static_cast<double>(r) - t * st;
    const double fx = std::floor(px), fy = std::floor(py);
    const double tx = px - fx, ty = py - fy;
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const long yy = static_cast<long>(fy) + dy, xx = static_cast<long>(fx) + dx;
        const double w = (dy ? ty : 1.0 - ty) * (dx ? tx : 1.0 - tx);
        if (w == 0.0 || yy < 0 || xx < 0 || yy >= static_cast<long>(n) ||
            xx >= static_cast<long>(n))
          continue;
        k(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) += w;
      }
    }
  }
  return normalised(std::move(k));
}

Image convolve(const Image& image, const Matrix& kernel) {
  if (kernel.rows() != kernel.cols() || kernel.rows() % 2 == 0) {
    throw DimensionError("kernel must be odd and square, got " + kernel.shape_string());
  }
  const long r = static_cast<long>(kernel.rows() / 2);
  Image out(image.height(), image.width());
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long ky = -r; ky <= r; ++ky) {
          for (long kx = -r; kx <= r; ++kx) {
            const double w =
                kernel(static_cast<std::size_t>(ky + r), static_cast<std::size_t>(kx + r));
            if (w == 0.0) continue;
            acc += w * image.clamped(static_cast<long>(y) + ky, static_cast<long>(x) + kx, c);
          }
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

Matrix plasma_fractal(std::size_t size, double decay, std::uint64_t seed) {
  if (size < 2 || ((size - 1) & (size - 2)) != 0) {
    throw ValueError("plasma size must be 2^k + 1");
  }
  CounterRng rng(seed, 0xf06);
  Matrix g(size, size);
  const std::size_t last = size - 1;
  double wibble = 1.0;
  for (std::size_t step = last; step >= 2; step /= 2) {
    const std::size_t half = step / 2;
    // Square step: centres of each square.
    for (std::size_t y = half; y < last; y += step) {
      for (std::size_t x = half; x < last; x += step) {
        const double avg =
            0.25 * (g(y - half, x - half) + g(y - half, x + half) + g(y + half, x - half) +
                    g(y + half, x + half));
        g(y, x) = avg + wibble * (rng.uniform() - 0.5);
      }
    }
    // Diamond step: edge midpoints, neighbours clipped to the grid.
    for (std::size_t y = 0; y <= last; y += half) {
      for (std::size_t x = (y / half) % 2 == 0 ? half : 0; x <= last; x += step) {
        double acc = 0.0;
        int cnt = 0;
        if (y >= half) acc += g(y - half, x), ++cnt;
        if (y + half <= last) acc += g(y + half, x), ++cnt;
        if (x >= half) acc += g(y, x - half), ++cnt;
        if (x + half <= last) acc += g(y, x + half), ++cnt;
        g(y, x) = acc / cnt + wibble * (rng.uniform() - 0.5);
      }
    }
    wibble /= decay;
  }
  double lo = g(0, 0), hi = g(0, 0);
  for (double v : g.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  const double span = hi - lo;
  for (double& v : g.data()) v = span > 0.0 ? (v - lo) / span : 0.0;
  return g;
}

// ---------------------------------------------------------------------------
// Generators. Each takes its parameter tuple and returns an unclamped image.

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ValueError("invalid corruption parameter: " + what);
}

Image gaussian_noise(const Image& img, double sigma, std::uint64_t seed, std::uint64_t stream) {
  require(sigma >= 0.0, "sigma >= 0");
  Image out = img;
  if (sigma == 0.0) return out;
  auto& px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] += sigma * normal_at(seed, stream, i);
  return out;
}

Image shot_noise(const Image& img, double photons, std::uint64_t seed, std::uint64_t stream) {
  require(photons > 0.0, "photons > 0");
  Image out = img;
  auto& px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    // Poisson by CDF inversion; rates stay below a few hundred here.
    const double lam = std::max(0.0, px[i]) * photons;
    const double u = uniform_at(seed, stream, i);
    double p = std::exp(-lam), cdf = p;
    long k = 0;
    while (u > cdf && k < 100000) {
      ++k;
      p *= lam / static_cast<double>(k);
      cdf += p;
      if (p == 0.0 && cdf < u) break;  // tail underflow; stop at the current count
    }
    px[i] = static_cast<double>(k) / photons;
  }
  return out;
}

Image impulse_noise(const Image& img, double amount, std::uint64_t seed, std::uint64_t stream) {
  require(amount >= 0.0 && amount <= 1.0, "amount in [0, 1]");
  Image out = img;
  auto& px = out.pixels();
  const std::size_t n = px.size();
  for (std::size_t i = 0; i < n; ++i) {
    // `u < amount` with the same u at every severity: the hit set only grows.
    if (uniform_at(seed, stream, i) < amount) {
      px[i] = uniform_at(seed, stream, n + i) < 0.5 ? 0.0 : 1.0;
    }
  }
  return out;
}

Image speckle_noise(const Image& img, double sigma, std::uint64_t seed, std::uint64_t stream) {
  require(sigma >= 0.0, "sigma >= 0");
  Image out = img;
  if (sigma == 0.0) return out;
  auto& px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] += px[i] * sigma * normal_at(seed, stream, i);
  return out;
}

Image zoom_blur(const Image& img, double max_zoom) {
  require(max_zoom >= 1.0, "max_zoom >= 1");
  const double cy = (static_cast<double>(img.height()) - 1.0) / 2.0;
  const double cx = (static_cast<double>(img.width()) - 1.0) / 2.0;
  Image acc = img;
  int count = 1;
  for (int k = 1;; ++k) {
    const double z = 1.0 + 0.02 * k;
    if (z > max_zoom + 1e-12) break;
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x)
        for (std::size_t c = 0; c < 3; ++c)
          acc.at(y, x, c) += img.bilinear(cy + (static_cast<double>(y) - cy) / z,
                                          cx + (static_cast<double>(x) - cx) / z, c);
    ++count;
  }
  for (double& v : acc.pixels()) v /= count;
  return acc;
}

Image fog(const Image& img, double amplitude, std::uint64_t seed) {
  require(amplitude >= 0.0, "amplitude >= 0");
  std::size_t size = 3;
  while (size - 1 < std::max(img.height(), img.width())) size = (size - 1) * 2 + 1;
  const Matrix plasma = plasma_fractal(size, 2.0, seed);
  double top = 0.0;
  for (double v : img.pixels()) top = std::max(top, v);
  Image out = img;
  if (top + amplitude == 0.0) return out;
  const double squash = top / (top + amplitude);
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(y, x, c) = (img.at(y, x, c) + amplitude * plasma(y, x)) * squash;
  return out;
}

// Mean over all channels, summed so that a horizontal flip gives the same bits:
// mirrored pairs are added first, then rows in order.
double flip_stable_mean(const Image& img) {
  const std::size_t w = img.width();
  double total = 0.0;
  for (std::size_t y = 0; y < img.height(); ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < w / 2; ++x) {
      for (std::size_t c = 0; c < 3; ++c) row += img.at(y, x, c) + img.at(y, w - 1 - x, c);
    }
    if (w % 2 == 1) {
      for (std::size_t c = 0; c < 3; ++c) row += img.at(y, w / 2, c);
    }
    total += row;
  }
  return total / static_cast<double>(img.pixels().size());
}

Image contrast(const Image& img, double factor) {
  require(factor >= 0.0, "factor >= 0");
  const double m = flip_stable_mean(img);
  Image out = img;
  for (double& v : out.pixels()) v = (v - m) * factor + m;
  return out;
}

Image brightness(const Image& img, double shift) {
  Image out = img;
  for (double& v : out.pixels()) v += shift;
  return out;
}

Image saturate(const Image& img, double gain) {
  require(gain >= 0.0, "gain >= 0");
  Image out = img;
  auto& px = out.pixels();
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    double* rgb = px.data() + 3 * p;
    const double luma = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
    for (int c = 0; c < 3; ++c) rgb[c] = luma + gain * (rgb[c] - luma);
  }
  return out;
}

Image pixelate(const Image& img, double block_param) {
  require(block_param >= 1.0 && block_param == std::floor(block_param), "block is an integer >= 1");
  const auto b = static_cast<std::size_t>(block_param);
  Image out = img;
  for (std::size_t by = 0; by < img.height(); by += b) {
    for (std::size_t bx = 0; bx < img.width(); bx += b) {
      const std::size_t ey = std::min(by + b, img.height()), ex = std::min(bx + b, img.width());
      const double cnt = static_cast<double>((ey - by) * (ex - bx));
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t y = by; y < ey; ++y)
          for (std::size_t x = bx; x < ex; ++x) acc += img.at(y, x, c);
        for (std::size_t y = by; y < ey; ++y)
          for (std::size_t x = bx; x < ex; ++x) out.at(y, x, c) = acc / cnt;
      }
    }
  }
  return out;
}

// Smooth one displacement component with a separable Gaussian (edge-clamped).
std::vector<double> smooth_field(std::vector<double> f, std::size_t h, std::size_t w,
                                 double sigma) {
  if (sigma <= 0.0) return f;
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (long i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] =
        std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    total += k[static_cast<std::size_t>(i + r)];
  }
  for (double& v : k) v /= total;
  auto at = [&](const std::vector<double>& g, long y, long x) {
    y = std::clamp(y, 0L, static_cast<long>(h) - 1);
    x = std::clamp(x, 0L, static_cast<long>(w) - 1);
    return g[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  std::vector<double> tmp(f.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i)
        acc += k[static_cast<std::size_t>(i + r)] *
               at(f, static_cast<long>(y), static_cast<long>(x) + i);
      tmp[y * w + x] = acc;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long i = -r; i <= r; ++i)
        acc += k[static_cast<std::size_t>(i + r)] *
               at(tmp, static_cast<long>(y) + i, static_cast<long>(x));
      f[y * w + x] = acc;
    }
  return f;
}

Image elastic(const Image& img, double alpha, double sigma, std::uint64_t seed,
              std::uint64_t stream) {
  require(alpha >= 0.0, "alpha >= 0");
  require(sigma >= 0.0, "sigma >= 0");
  const std::size_t h = img.height(), w = img.width(), n = h * w;
  std::array<std::vector<double>, 2> field;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = normal_at(seed, stream, axis * n + i);
    f = smooth_field(std::move(f), h, w, sigma);
    // Unit RMS, so alpha is the displacement scale in pixels.
    double ss = 0.0;
    for (double v : f) ss += v * v;
    const double rms = std::sqrt(ss / static_cast<double>(n));
    for (double& v : f) v = rms > 0.0 ? alpha * v / rms : 0.0;
    field[axis] = std::move(f);
  }
  Image out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(y, x, c) = img.bilinear(static_cast<double>(y) + field[0][y * w + x],
                                       static_cast<double>(x) + field[1][y * w + x], c);
  return out;
}

}  // namespace

std::uint64_t corruption_call_count() noexcept { return g_corruption_calls.load(); }

Image corrupt_with(const Image& image, CorruptionKind kind, const std::vector<double>& params,
                   std::uint64_t seed) {
  g_corruption_calls.fetch_add(1, std::memory_order_relaxed);
  const SeverityRow& row = severity_row(kind);
  if (params.size() != row.names.size()) {
    throw ValueError(to_string(kind) + " takes " + std::to_string(row.names.size()) +
                     " parameter(s), got " + std::to_string(params.size()));
  }
  if (image.empty()) throw ValueError("cannot corrupt an empty image");
  const std::uint64_t stream = stream_of(kind);
  const double p = params[0];
  Image out;
  switch (kind) {
    case CorruptionKind::gaussian_noise: out = gaussian_noise(image, p, seed, stream); break;
    case CorruptionKind::shot_noise: out = shot_noise(image, p, seed, stream); break;
    case CorruptionKind::impulse_noise: out = impulse_noise(image, p, seed, stream); break;
    case CorruptionKind::speckle_noise: out = speckle_noise(image, p, seed, stream); break;
    case CorruptionKind::gaussian_blur: out = convolve(image, gaussian_kernel(p)); break;
    case CorruptionKind::defocus_blur: out = convolve(image, disk_kernel(p)); break;
    case CorruptionKind::motion_blur: {
      const double angle = uniform_at(seed, stream, 0) * 90.0 - 45.0;
      out = convolve(image, motion_kernel(p, angle));
      break;
    }
    case CorruptionKind::zoom_blur: out = zoom_blur(image, p); break;
    case CorruptionKind::fog: out = fog(image, p, seed ^ stream); break;
    case CorruptionKind::contrast: out = contrast(image, p); break;
    case CorruptionKind::brightness: out = brightness(image, p); break;
    case CorruptionKind::saturate: out = saturate(image, p); break;
    case CorruptionKind::pixelate: out = pixelate(image, p); break;
    case CorruptionKind::elastic_transform:
      out = elastic(image, p, params[1], seed, stream);
      break;
  }
  out.clamp();
  return out;
}

Image corrupt(const Image& image, const CorruptionSpec& spec) {
  spec.validate();
  return corrupt_with(image, spec.kind, severity_params(spec.kind, spec.severity), spec.seed);
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("psnr: image shapes differ (" + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()) + ")");
  }
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) {
    const double d = a.pixels()[i] - b.pixels()[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels().size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace ibkit
