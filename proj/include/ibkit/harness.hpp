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

// Toy robustness study: synthetic 32x32 shape scenes, a frozen random patch
// encoder, an adapter (mlp / ib / fused) plus a linear head trained on clean
// data only, and evaluation over a corruption grid.
//
//   image -> 8x8 grid of 4x4 patches (48 values) -> frozen 48x32 projection
//         -> X (64 x 32) -> adapter -> Z (64 x 32) -> mean over tokens -> head

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibkit/adapter.hpp"
#include "ibkit/corruptions.hpp"
#include "ibkit/image.hpp"

namespace ibkit::harness {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kPatch = 4;
inline constexpr std::size_t kGrid = kImageSize / kPatch;
inline constexpr std::size_t kTokens = kGrid * kGrid;                     // 64
inline constexpr std::size_t kPatchDim = kPatch * kPatch * Image::kChannels;  // 48
inline constexpr std::size_t kEmbedDim = 32;
inline constexpr std::size_t kClasses = 4;
inline constexpr int kReportSchemaVersion = 1;

/// Class fixes the shape type and its hue (jittered); count (1-3), size and
/// position are nuisance.
enum class ShapeClass { disc = 0, square = 1, triangle = 2, cross = 3 };
std::string to_string(ShapeClass c);

struct ToyScene {
  Image image;
  int label = 0;
  std::vector<std::uint8_t> token_mask;  // kTokens entries, 1 = overlaps a shape
};

/// Deterministic; labels cycle 0,1,2,3 so classes are balanced within 1.
std::vector<ToyScene> make_toy_dataset(std::uint64_t seed, std::size_t n_scenes);

/// Frozen, bias-free random patch embedding; entries N(0, 1/48).
class FrozenEncoder {
 public:
  explicit FrozenEncoder(std::uint64_t seed);
  const Matrix& projection() const noexcept { return projection_; }
  std::uint64_t seed() const noexcept { return seed_; }
  /// kTokens x kEmbedDim. Throws DimensionError unless the image is 32x32.
  Matrix encode(const Image& image) const;

 private:
  std::uint64_t seed_;
  Matrix projection_;
};

/// Row t holds the 48 pixel values of patch t (row-major patches, channels last).
Matrix patchify(const Image& image);
Matrix encode(const ToyScene& scene, std::uint64_t frozen_seed);

struct TrainConfig {
  ProjectorKind model_kind = ProjectorKind::fused;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  double p_drop = 0.3;
  double lambda_init = 0.3;
  int crop_jitter = 4;          // max shift in pixels, reflection padding
  double color_jitter = 0.1;    // per-channel additive offset bound
  std::size_t train_scenes = 4096;
  std::uint64_t data_seed = 1000;
  std::uint64_t encoder_seed = 7;
  std::size_t heads = 4;
  std::size_t trace_every = 10;

  /// Throws ValueError on lr <= 0, batch 0, p_drop outside [0, 1].
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ClassifierHead {
  ParamSlot weight;  // kEmbedDim x kClasses
  ParamSlot bias;    // 1 x kClasses
};

struct TracePoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainedModel {
  TrainConfig config;
  AdapterConfig adapter;
  FusedParams params;
  ClassifierHead head;
  std::vector<TracePoint> trace;

  std::vector<ParamSlot*> slots();
  std::vector<const ParamSlot*> slots() const;
  /// FNV-1a over every slot's bytes.
  std::uint64_t checksum() const;
};

/// Initialised, untrained model for `config`.
TrainedModel init_model(const TrainConfig& config);

/// Adam on softmax cross-entropy; corruptions are never called (checked).
/// Throws NumericError naming the step if the loss goes non-finite.
TrainedModel train_policy(const std::vector<ToyScene>& train, const TrainConfig& config);

/// Crop jitter (reflection padding) and colour jitter.
Image augment(const Image& image, int max_shift, double color_jitter, CounterRng& rng);

/// Adapter output (infer mode) for one image.
Matrix adapter_features(const TrainedModel& model, const FrozenEncoder& encoder,
                        const Image& image);
/// Class logits (1 x kClasses) from adapter features.
Matrix head_logits(const TrainedModel& model, const Matrix& features);
int predict(const TrainedModel& model, const FrozenEncoder& encoder, const Image& image);
double accuracy(const TrainedModel& model, const std::vector<ToyScene>& scenes);

/// Mean over rows of cos(clean_i, corrupt_i); zero rows count as 0.
double feature_consistency(const Matrix& clean_z, const Matrix& corrupt_z);

struct GroupingResult {
  double purity = 0.0;
  bool degenerate = false;  // all tokens identical; purity is the majority fraction
  int iterations = 0;
};

/// Lloyd's K-means with K=2 and k-means++ seeding; purity against the mask.
/// Throws ValueError if the mask has a single class or N < 2.
GroupingResult kmeans2_grouping(const Matrix& z, const std::vector<std::uint8_t>& mask,
                                std::uint64_t seed = 0, int max_iter = 100);

/// K-means purity of i.i.d. N(0, 1) tokens (kTokens x kEmbedDim) against a
/// random balanced mask; the chance level for grouping purity.
double random_feature_null_purity(std::uint64_t seed);

struct GridCell {
  CorruptionKind kind;
  int severity = 0;
  double accuracy = 0.0;
  double consistency_encoder = 0.0;
  double consistency_adapter = 0.0;
  double purity = 0.0;
};

struct RobustnessReport {
  std::string model_kind;
  double clean_accuracy = 0.0;
  double clean_purity = 0.0;
  std::vector<GridCell> cells;
  nlohmann::json metadata;

  const GridCell* find(CorruptionKind kind, int severity) const;
};

struct GridOptions {
  std::vector<CorruptionKind> kinds;
  std::vector<int> severities;
  std::uint64_t corruption_seed = 0;
  /// Optional parameter override (kind -> params) used instead of the table.
  std::vector<std::pair<CorruptionKind, std::vector<double>>> overrides;
  bool with_features = true;  // consistency and purity
};

/// Deterministic; cells may run in parallel (see thread_budget()).
RobustnessReport evaluate_grid(const TrainedModel& model, const std::vector<ToyScene>& scenes,
                               const GridOptions& options);

nlohmann::json to_json(const RobustnessReport& r);
RobustnessReport report_from_json(const nlohmann::json& j);
/// Hash of the report JSON without its "timestamp" field.
std::uint64_t report_hash(const nlohmann::json& report);

/// Worker count from IBKIT_THREADS (unset or 0 = hardware concurrency).
std::size_t thread_budget();
/// Runs fn(i) for i in [0, n) over at most thread_budget() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

void save_model(const std::filesystem::path& dir, const TrainedModel& model);
TrainedModel load_model(const std::filesystem::path& dir);
void write_trace_csv(const std::filesystem::path& path, const std::vector<TracePoint>& trace);

}  // namespace ibkit::harness
