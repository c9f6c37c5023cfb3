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

#include "ibkit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <numbers>
#include <thread>

#include "ibkit/errors.hpp"
#include "ibkit/random.hpp"

namespace ibkit::harness {

std::string to_string(ShapeClass c) {
  switch (c) {
    case ShapeClass::disc: return "disc";
    case ShapeClass::square: return "square";
    case ShapeClass::triangle: return "triangle";
    case ShapeClass::cross: return "cross";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Scenes.

namespace {

struct Placed {
  double cx, cy, r;
};

bool inside(ShapeClass shape, double dx, double dy, double r) {
  switch (shape) {
    case ShapeClass::disc:
      return dx * dx + dy * dy <= r * r;
    case ShapeClass::square:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeClass::triangle:  // apex up, base at dy = r
      return dy >= -r && dy <= r && std::abs(dx) <= 0.5 * (dy + r);
    case ShapeClass::cross: {
      const double arm = 0.3 * r;
      return (std::abs(dx) <= arm && std::abs(dy) <= r) ||
             (std::abs(dy) <= arm && std::abs(dx) <= r);
    }
  }
  return false;
}

// One hue per class; the shape type and the hue are redundant cues.
constexpr double kClassColour[kClasses][3] = {
    {0.85, 0.2, 0.15}, {0.15, 0.75, 0.25}, {0.2, 0.3, 0.9}, {0.9, 0.8, 0.15},
};

ToyScene make_scene(std::uint64_t seed, std::size_t index) {
  CounterRng rng(seed, 0x5ce0000 + index);
  ToyScene s;
  s.label = static_cast<int>(index % kClasses);
  const auto shape = static_cast<ShapeClass>(s.label);
  s.image = Image(kImageSize, kImageSize);

  // Textured, low-saturation background.
  const double grey = rng.uniform(0.35, 0.6);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.05, 0.05);
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      const double wave = 0.06 * std::sin(2.0 * std::numbers::pi *
                                              (fx * static_cast<double>(x) +
                                               fy * static_cast<double>(y)) /
                                              kImageSize +
                                          phase);
      const double grain = 0.04 * (uniform_at(seed ^ 0xb6, index, y * kImageSize + x) - 0.5);
      for (std::size_t c = 0; c < 3; ++c) s.image.at(y, x, c) = grey + tint[c] + wave + grain;
    }
  }

  // 1-3 non-overlapping shapes of the class type.
  const int count = 1 + static_cast<int>(rng.below(3));
  std::vector<Placed> placed;
  for (int k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double r = rng.uniform(4.0, 6.5);
      const double cx = rng.uniform(r, kImageSize - r), cy = rng.uniform(r, kImageSize - r);
      bool clear = true;
      for (const Placed& p : placed)
        if (std::hypot(cx - p.cx, cy - p.cy) < r + p.r + 1.0) clear = false;
      if (!clear) continue;
      placed.push_back({cx, cy, r});
      break;
    }
  }
  s.token_mask.assign(kTokens, 0);
  for (const Placed& p : placed) {
    double col[3];
    for (std::size_t c = 0; c < 3; ++c)
      col[c] = kClassColour[s.label][c] + rng.uniform(-0.08, 0.08);
    for (std::size_t y = 0; y < kImageSize; ++y) {
      for (std::size_t x = 0; x < kImageSize; ++x) {
        if (!inside(shape, static_cast<double>(x) + 0.5 - p.cx, static_cast<double>(y) + 0.5 - p.cy,
                    p.r))
          continue;
        for (std::size_t c = 0; c < 3; ++c) s.image.at(y, x, c) = col[c];
        s.token_mask[(y / kPatch) * kGrid + x / kPatch] = 1;
      }
    }
  }
  s.image.clamp();
  return s;
}

}  // namespace

std::vector<ToyScene> make_toy_dataset(std::uint64_t seed, std::size_t n_scenes) {
  if (n_scenes == 0) throw ValueError("dataset needs at least one scene");
  std::vector<ToyScene> out;
  out.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) out.push_back(make_scene(seed, i));
  return out;
}

// ---------------------------------------------------------------------------
// Encoder.

FrozenEncoder::FrozenEncoder(std::uint64_t seed) : seed_(seed) {
  CounterRng rng(seed, 0xe4c0de);
  projection_ = Matrix::randn(kPatchDim, kEmbedDim, rng, 1.0 / std::sqrt(double(kPatchDim)));
}

Matrix patchify(const Image& image) {
  if (image.height() != kImageSize || image.width() != kImageSize) {
    throw DimensionError("encoder expects a 32x32 image, got " + std::to_string(image.height()) +
                         "x" + std::to_string(image.width()));
  }
  Matrix p(kTokens, kPatchDim);
  for (std::size_t t = 0; t < kTokens; ++t) {
    const std::size_t by = (t / kGrid) * kPatch, bx = (t % kGrid) * kPatch;
    std::size_t k = 0;
    for (std::size_t y = 0; y < kPatch; ++y)
      for (std::size_t x = 0; x < kPatch; ++x)
        for (std::size_t c = 0; c < 3; ++c) p(t, k++) = image.at(by + y, bx + x, c);
  }
  return p;
}

Matrix FrozenEncoder::encode(const Image& image) const {
  return matmul(patchify(image), projection_);
}

Matrix encode(const ToyScene& scene, std::uint64_t frozen_seed) {
  return FrozenEncoder(frozen_seed).encode(scene.image);
}

// ---------------------------------------------------------------------------
// Config.

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValueError("lr must be positive");
  if (batch_size == 0) throw ValueError("batch_size must be positive");
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw ValueError("p_drop must be in [0, 1]");
  if (crop_jitter < 0 || crop_jitter >= static_cast<int>(kImageSize))
    throw ValueError("crop_jitter must be in [0, 31]");
  if (!(color_jitter >= 0.0)) throw ValueError("color_jitter must be >= 0");
  if (train_scenes == 0) throw ValueError("train_scenes must be positive");
  if (heads == 0 || kEmbedDim % heads != 0) throw ValueError("heads must divide 32");
  if (trace_every == 0) throw ValueError("trace_every must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", ibkit::to_string(c.model_kind)},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"seed", c.seed},
          {"p_drop", c.p_drop},
          {"lambda_init", c.lambda_init},
          {"crop_jitter", c.crop_jitter},
          {"color_jitter", c.color_jitter},
          {"train_scenes", c.train_scenes},
          {"data_seed", c.data_seed},
          {"encoder_seed", c.encoder_seed},
          {"heads", c.heads},
          {"trace_every", c.trace_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValueError("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "model") c.model_kind = parse_projector_kind(value.get<std::string>());
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "p_drop") c.p_drop = value.get<double>();
      else if (key == "lambda_init") c.lambda_init = value.get<double>();
      else if (key == "crop_jitter") c.crop_jitter = value.get<int>();
      else if (key == "color_jitter") c.color_jitter = value.get<double>();
      else if (key == "train_scenes") c.train_scenes = value.get<std::size_t>();
      else if (key == "data_seed") c.data_seed = value.get<std::uint64_t>();
      else if (key == "encoder_seed") c.encoder_seed = value.get<std::uint64_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "trace_every") c.trace_every = value.get<std::size_t>();
      else throw ValueError("unknown train config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValueError("bad value for train config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model.

namespace {

AdapterConfig adapter_for(const TrainConfig& c) {
  AdapterConfig a;
  a.dim = kEmbedDim;
  a.heads = c.heads;
  a.lambda_init = c.lambda_init;
  a.p_drop = c.p_drop;
  a.kind = c.model_kind;
  return a;
}

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace

std::vector<ParamSlot*> TrainedModel::slots() {
  auto s = params.slots();
  s.push_back(&head.weight);
  s.push_back(&head.bias);
  return s;
}

std::vector<const ParamSlot*> TrainedModel::slots() const {
  auto s = params.slots();
  s.push_back(&head.weight);
  s.push_back(&head.bias);
  return s;
}

std::uint64_t TrainedModel::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const ParamSlot* s : slots()) {
    h = fnv_bytes(h, s->name().data(), s->name().size());
    h = fnv_bytes(h, s->value().data().data(), s->value().size() * sizeof(double));
  }
  return h;
}

TrainedModel init_model(const TrainConfig& config) {
  config.validate();
  TrainedModel m;
  m.config = config;
  m.adapter = adapter_for(config);
  CounterRng rng(config.seed, 0x1417);
  m.params = FusedParams(m.adapter, rng);
  m.head.weight = ParamSlot("head.weight", Matrix::randn(kEmbedDim, kClasses, rng, 0.02));
  m.head.bias = ParamSlot("head.bias", Matrix(1, kClasses));
  return m;
}

Image augment(const Image& image, int max_shift, double color_jitter, CounterRng& rng) {
  const long dy = max_shift > 0 ? static_cast<long>(rng.below(2 * max_shift + 1)) - max_shift : 0;
  const long dx = max_shift > 0 ? static_cast<long>(rng.below(2 * max_shift + 1)) - max_shift : 0;
  double offset[3];
  for (double& o : offset)
    o = color_jitter > 0.0 ? rng.uniform(-color_jitter, color_jitter) : 0.0;
  const long h = static_cast<long>(image.height()), w = static_cast<long>(image.width());
  auto reflect = [](long i, long n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
    return std::clamp(i, 0L, n - 1);
  };
  Image out(image.height(), image.width());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            image.at(static_cast<std::size_t>(reflect(y + dy, h)),
                     static_cast<std::size_t>(reflect(x + dx, w)), c) +
            offset[c];
  out.clamp();
  return out;
}

namespace {

Matrix mean_rows(const Matrix& z) {
  Matrix out(1, z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t c = 0; c < z.cols(); ++c) out(0, c) += z(r, c);
  for (double& v : out.data()) v /= static_cast<double>(z.rows());
  return out;
}

struct AdamState {
  std::vector<Matrix> m, v;
  std::size_t t = 0;
};

void adam_step(std::span<ParamSlot* const> slots, AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.empty()) {
    for (ParamSlot* s : slots) {
      st.m.emplace_back(s->value().rows(), s->value().cols());
      st.v.emplace_back(s->value().rows(), s->value().cols());
    }
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto val = slots[i]->value().data();
    auto g = slots[i]->grad().data();
    auto m = st.m[i].data();
    auto v = st.v[i].data();
    for (std::size_t k = 0; k < val.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      val[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

}  // namespace

TrainedModel train_policy(const std::vector<ToyScene>& train, const TrainConfig& config) {
  if (train.empty()) throw ValueError("training set is empty");
  TrainedModel model = init_model(config);
  if (config.steps == 0) return model;

  const std::uint64_t corruption_calls = corruption_call_count();
  const FrozenEncoder encoder(config.encoder_seed);
  CounterRng batch_rng(config.seed, 0xba7c);
  CounterRng aug_rng(config.seed, 0xa06);
  CounterRng spd_rng(config.seed, 0x5bd);
  AdamState adam;
  std::vector<ParamSlot*> slots = model.slots();
  const double inv_b = 1.0 / static_cast<double>(config.batch_size);

  for (std::size_t step = 0; step < config.steps; ++step) {
    for (ParamSlot* s : slots) s->zero_grad();
    double loss = 0.0;
    try {
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        const ToyScene& scene = train[batch_rng.below(train.size())];
        const Image img = augment(scene.image, config.crop_jitter, config.color_jitter, aug_rng);
        const Matrix x = encoder.encode(img);
        FusedTape tape;
        const Matrix z = fused_forward(x, model.params, Mode::train, spd_rng, &tape);
        const Matrix pooled = mean_rows(z);
        Matrix logits = matmul(pooled, model.head.weight.value());
        for (std::size_t k = 0; k < kClasses; ++k) logits(0, k) += model.head.bias.value()(0, k);

        const Matrix prob = activate(Activation::softmax_rows, logits);
        loss -= std::log(std::max(prob(0, static_cast<std::size_t>(scene.label)), 1e-300)) * inv_b;

        Matrix dlogits = prob;
        dlogits(0, static_cast<std::size_t>(scene.label)) -= 1.0;
        for (double& v : dlogits.data()) v *= inv_b;
        model.head.weight.accumulate(matmul_tn(pooled, dlogits));
        model.head.bias.accumulate(dlogits);
        const Matrix dpooled = matmul_nt(dlogits, model.head.weight.value());
        Matrix dz(z.rows(), z.cols());
        for (std::size_t r = 0; r < z.rows(); ++r)
          for (std::size_t c = 0; c < z.cols(); ++c)
            dz(r, c) = dpooled(0, c) / static_cast<double>(z.rows());
        (void)fused_backward(dz, tape, model.params);
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss)) {
      throw NumericError("training diverged at step " + std::to_string(step) +
                         " (loss is not finite)");
    }
    adam_step(slots, adam, config.lr);
    if (step % config.trace_every == 0 || step + 1 == config.steps) {
      model.trace.push_back({step, loss});
    }
  }
  if (corruption_call_count() != corruption_calls) {
    throw StateError("training invoked the corruption module");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Inference and metrics.

Matrix adapter_features(const TrainedModel& model, const FrozenEncoder& encoder,
                        const Image& image) {
  CounterRng unused(0);
  return fused_forward(encoder.encode(image), model.params, Mode::infer, unused);
}

Matrix head_logits(const TrainedModel& model, const Matrix& features) {
  Matrix logits = matmul(mean_rows(features), model.head.weight.value());
  for (std::size_t k = 0; k < kClasses; ++k) logits(0, k) += model.head.bias.value()(0, k);
  return logits;
}

namespace {

int argmax_row(const Matrix& logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.cols(); ++k)
    if (logits(0, k) > logits(0, best)) best = k;
  return static_cast<int>(best);
}

}  // namespace

int predict(const TrainedModel& model, const FrozenEncoder& encoder, const Image& image) {
  return argmax_row(head_logits(model, adapter_features(model, encoder, image)));
}

double accuracy(const TrainedModel& model, const std::vector<ToyScene>& scenes) {
  if (scenes.empty()) return 0.0;
  const FrozenEncoder encoder(model.config.encoder_seed);
  std::size_t hits = 0;
  for (const ToyScene& s : scenes)
    if (predict(model, encoder, s.image) == s.label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(scenes.size());
}

double feature_consistency(const Matrix& clean_z, const Matrix& corrupt_z) {
  if (!clean_z.same_shape(corrupt_z)) {
    throw DimensionError("feature_consistency: " + clean_z.shape_string() + " vs " +
                         corrupt_z.shape_string());
  }
  if (clean_z.rows() == 0) throw DimensionError("feature_consistency: no tokens");
  double total = 0.0;
  for (std::size_t r = 0; r < clean_z.rows(); ++r) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < clean_z.cols(); ++c) {
      ab += clean_z(r, c) * corrupt_z(r, c);
      aa += clean_z(r, c) * clean_z(r, c);
      bb += corrupt_z(r, c) * corrupt_z(r, c);
    }
    if (aa > 0.0 && bb > 0.0) total += std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  }
  return total / static_cast<double>(clean_z.rows());
}

GroupingResult kmeans2_grouping(const Matrix& z, const std::vector<std::uint8_t>& mask,
                                std::uint64_t seed, int max_iter) {
  const std::size_t n = z.rows(), d = z.cols();
  if (n < 2) throw ValueError("k-means needs at least two tokens");
  if (mask.size() != n) {
    throw DimensionError("mask has " + std::to_string(mask.size()) + " entries for " +
                         std::to_string(n) + " tokens");
  }
  std::size_t fg = 0;
  for (auto m : mask) fg += m ? 1 : 0;
  if (fg == 0 || fg == n) throw ValueError("mask must contain both foreground and background");

  auto dist2 = [&](std::size_t i, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double t = z(i, k) - c[k];
      s += t * t;
    }
    return s;
  };
  auto row = [&](std::size_t i) {
    auto r = z.row(i);
    return std::vector<double>(r.begin(), r.end());
  };

  // k-means++: first centre uniform, second proportional to squared distance.
  CounterRng rng(seed, 0x6b6d);
  std::vector<std::vector<double>> centre(2);
  centre[0] = row(rng.below(n));
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (w[i] = dist2(i, centre[0]));
  GroupingResult res;
  if (total == 0.0) {
    res.degenerate = true;
    res.purity = static_cast<double>(std::max(fg, n - fg)) / static_cast<double>(n);
    return res;
  }
  double pick = rng.uniform() * total;
  std::size_t second = n - 1;
  for (std::size_t i = 0; i < n; ++i) {
    pick -= w[i];
    if (pick < 0.0 && w[i] > 0.0) {
      second = i;
      break;
    }
  }
  if (w[second] == 0.0) {  // fell off the end onto a duplicate of centre 0
    for (std::size_t i = n; i-- > 0;)
      if (w[i] > 0.0) {
        second = i;
        break;
      }
  }
  centre[1] = row(second);

  std::vector<int> assign(n, -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int a = dist2(i, centre[1]) < dist2(i, centre[0]) ? 1 : 0;
      if (a != assign[i]) changed = true, assign[i] = a;
    }
    res.iterations = it + 1;
    if (!changed) break;
    for (int k = 0; k < 2; ++k) {
      std::vector<double> acc(d, 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] != k) continue;
        ++cnt;
        for (std::size_t c = 0; c < d; ++c) acc[c] += z(i, c);
      }
      if (cnt == 0) continue;  // keep the old centre
      for (double& v : acc) v /= static_cast<double>(cnt);
      centre[static_cast<std::size_t>(k)] = std::move(acc);
    }
  }
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i)
    if ((assign[i] == 1) == (mask[i] != 0)) ++agree;
  const double a = static_cast<double>(agree) / static_cast<double>(n);
  res.purity = std::max(a, 1.0 - a);
  return res;
}

double random_feature_null_purity(std::uint64_t seed) {
  CounterRng rng(seed, 0x9011);
  const Matrix z = Matrix::randn(kTokens, kEmbedDim, rng);
  std::vector<std::uint8_t> mask(kTokens, 0);
  std::fill(mask.begin(), mask.begin() + kTokens / 2, 1);
  // Fisher-Yates with the same stream.
  for (std::size_t i = kTokens - 1; i > 0; --i) std::swap(mask[i], mask[rng.below(i + 1)]);
  return kmeans2_grouping(z, mask, seed).purity;
}

// ---------------------------------------------------------------------------
// Grid evaluation.

const GridCell* RobustnessReport::find(CorruptionKind kind, int severity) const {
  for (const GridCell& c : cells)
    if (c.kind == kind && c.severity == severity) return &c;
  return nullptr;
}

std::size_t thread_budget() {
  std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IBKIT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return hw;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

RobustnessReport evaluate_grid(const TrainedModel& model, const std::vector<ToyScene>& scenes,
                               const GridOptions& options) {
  if (scenes.empty()) throw ValueError("evaluation set is empty");
  for (int s : options.severities) CorruptionSpec{CorruptionKind::fog, s, 0}.validate();
  const FrozenEncoder encoder(model.config.encoder_seed);
  const std::size_t n = scenes.size();

  std::vector<Matrix> clean_x(n), clean_z(n);
  std::size_t clean_hits = 0;
  double clean_purity = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    clean_x[i] = encoder.encode(scenes[i].image);
    CounterRng unused(0);
    clean_z[i] = fused_forward(clean_x[i], model.params, Mode::infer, unused);
    if (argmax_row(head_logits(model, clean_z[i])) == scenes[i].label) ++clean_hits;
    if (options.with_features)
      clean_purity += kmeans2_grouping(clean_z[i], scenes[i].token_mask, i).purity;
  }

  RobustnessReport report;
  report.model_kind = ibkit::to_string(model.config.model_kind);
  report.clean_accuracy = static_cast<double>(clean_hits) / static_cast<double>(n);
  report.clean_purity = options.with_features ? clean_purity / static_cast<double>(n) : 0.0;

  for (CorruptionKind k : options.kinds)
    for (int s : options.severities) report.cells.push_back({k, s});

  parallel_for(report.cells.size(), [&](std::size_t ci) {
    GridCell& cell = report.cells[ci];
    const std::vector<double>* override_params = nullptr;
    for (const auto& [kind, params] : options.overrides)
      if (kind == cell.kind) override_params = &params;
    std::size_t hits = 0;
    double cons_x = 0.0, cons_z = 0.0, purity = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t seed = hash_counter(options.corruption_seed, 0xe7a1, i);
      const Image img = override_params
                            ? corrupt_with(scenes[i].image, cell.kind, *override_params, seed)
                            : corrupt(scenes[i].image, {cell.kind, cell.severity, seed});
      const Matrix x = encoder.encode(img);
      CounterRng unused(0);
      const Matrix z = fused_forward(x, model.params, Mode::infer, unused);
      if (argmax_row(head_logits(model, z)) == scenes[i].label) ++hits;
      if (options.with_features) {
        cons_x += feature_consistency(clean_x[i], x);
        cons_z += feature_consistency(clean_z[i], z);
        purity += kmeans2_grouping(z, scenes[i].token_mask, i).purity;
      }
    }
    const double dn = static_cast<double>(n);
    cell.accuracy = static_cast<double>(hits) / dn;
    cell.consistency_encoder = cons_x / dn;
    cell.consistency_adapter = cons_z / dn;
    cell.purity = purity / dn;
  });

  report.metadata = {{"train_config", to_json(model.config)},
                     {"param_checksum", model.checksum()},
                     {"eval_scenes", n},
                     {"corruption_seed", options.corruption_seed},
                     {"encoder_seed", model.config.encoder_seed}};
  const std::string cfg = report.metadata["train_config"].dump();
  report.metadata["config_hash"] = fnv_bytes(kFnvOffset, cfg.data(), cfg.size());
  return report;
}

nlohmann::json to_json(const RobustnessReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const GridCell& c : r.cells) {
    cells.push_back({{"kind", ibkit::to_string(c.kind)},
                     {"severity", c.severity},
                     {"accuracy", c.accuracy},
                     {"consistency", {{"encoder", c.consistency_encoder},
                                      {"adapter", c.consistency_adapter}}},
                     {"purity", c.purity}});
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return {{"schema_version", kReportSchemaVersion},
          {"model_kind", r.model_kind},
          {"clean_accuracy", r.clean_accuracy},
          {"clean_purity", r.clean_purity},
          {"cells", cells},
          {"metadata", r.metadata},
          {"timestamp", stamp}};
}

RobustnessReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw ValueError("unsupported report schema_version " + j.at("schema_version").dump());
    }
    RobustnessReport r;
    r.model_kind = j.at("model_kind").get<std::string>();
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.clean_purity = j.at("clean_purity").get<double>();
    r.metadata = j.value("metadata", nlohmann::json::object());
    for (const auto& c : j.at("cells")) {
      GridCell cell{parse_corruption_kind(c.at("kind").get<std::string>()),
                    c.at("severity").get<int>()};
      cell.accuracy = c.at("accuracy").get<double>();
      cell.consistency_encoder = c.at("consistency").at("encoder").get<double>();
      cell.consistency_adapter = c.at("consistency").at("adapter").get<double>();
      cell.purity = c.at("purity").get<double>();
      r.cells.push_back(cell);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("malformed report JSON: ") + e.what());
  }
}

std::uint64_t report_hash(const nlohmann::json& report) {
  nlohmann::json copy = report;
  if (copy.is_object()) copy.erase("timestamp");
  const std::string s = copy.dump();
  return fnv_bytes(kFnvOffset, s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Persistence.

void save_model(const std::filesystem::path& dir, const TrainedModel& model) {
  const auto slots = model.slots();
  nlohmann::json meta = {{"train_config", to_json(model.config)},
                         {"adapter_config", ibkit::to_json(model.adapter)},
                         {"param_checksum", model.checksum()},
                         {"trace_points", model.trace.size()}};
  save_checkpoint(dir, slots, meta);
}

TrainedModel load_model(const std::filesystem::path& dir) {
  const Checkpoint ckpt = load_checkpoint(dir);
  if (!ckpt.metadata.contains("train_config")) {
    throw ValueError("checkpoint '" + dir.string() + "' has no train_config metadata");
  }
  TrainedModel m = init_model(train_config_from_json(ckpt.metadata.at("train_config")));
  const auto slots = m.slots();
  restore_slots(ckpt, slots);
  return m;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TracePoint>& trace) {
  std::ofstream out(path);
  if (!out) throw ValueError("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "step,loss\n";
  for (const TracePoint& t : trace) out << t.step << ',' << t.loss << '\n';
}

}  // namespace ibkit::harness
