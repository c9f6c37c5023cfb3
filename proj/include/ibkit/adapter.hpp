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

// IB-Adapter: per-head channel covariance gating.
//
//   G_h = (X_h W_q)^T X_h            d x d, raw X_h is the key
//   A_h = sigmoid(tau_h * G_h - b_h)
//   V_h = LayerNorm(gelu(X_h W_v1) W_v2)
//   Z_h = V_h A_h,   Z = [Z_1, ..., Z_H]
//
// Fused adapter: Z = MLP(X) + tanh(lambda) * IB(X), MLP(X) = gelu(X W1) W2.
// During training the MLP pathway is dropped with probability p_drop, one
// draw per forward call, without rescaling.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ibkit/random.hpp"
#include "ibkit/tensor.hpp"

namespace ibkit {

enum class ProjectorKind { mlp, ib, fused };
enum class Mode { train, infer };

std::string to_string(ProjectorKind kind);
/// Throws ValueError for anything but "mlp", "ib", "fused".
ProjectorKind parse_projector_kind(const std::string& name);

struct AdapterConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t hidden = 0;        // 0 selects 4 * dim
  double lambda_init = 0.3;
  double p_drop = 0.3;
  double tau_init = -1.0;        // negative selects 1 / sqrt(head_dim)
  double bias_init = 1.0;
  double init_std = 0.02;
  ProjectorKind kind = ProjectorKind::fused;
};

struct IBHead {
  ParamSlot w_q;
  ParamSlot tau;
  ParamSlot bias;
  ParamSlot w_v1;
  ParamSlot w_v2;
  ParamSlot norm_gamma;
  ParamSlot norm_beta;
};

class IBAdapterParams {
 public:
  IBAdapterParams() = default;
  /// Throws DimensionError unless heads divides dim.
  IBAdapterParams(std::size_t dim, std::size_t heads, CounterRng& rng, double tau_init,
                  double bias_init, double init_std);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t head_count() const noexcept { return heads.size(); }
  std::size_t head_dim() const noexcept { return head_dim_; }

  void collect(std::vector<ParamSlot*>& out);
  void zero_grad();

  std::vector<IBHead> heads;

 private:
  std::size_t dim_ = 0;
  std::size_t head_dim_ = 0;
};

class FusedParams {
 public:
  FusedParams() = default;
  /// Initialises every weight from `rng` (std init_std); gamma = 1, beta = 0.
  FusedParams(const AdapterConfig& config, CounterRng& rng);

  std::size_t dim() const noexcept { return ib.dim(); }
  std::size_t hidden() const noexcept { return mlp_w1.value().cols(); }
  ProjectorKind kind() const noexcept { return kind_; }
  double p_drop() const noexcept { return p_drop_; }
  void set_p_drop(double p);

  /// Slots that take part in the forward pass for this kind.
  std::vector<ParamSlot*> slots();
  std::vector<const ParamSlot*> slots() const;
  void zero_grad();

  IBAdapterParams ib;
  ParamSlot mlp_w1;
  ParamSlot mlp_w2;
  ParamSlot lambda;

 private:
  double p_drop_ = 0.0;
  ProjectorKind kind_ = ProjectorKind::fused;
};

// ---------------------------------------------------------------------------
// Building blocks.

/// Contiguous channel blocks [h*d, (h+1)*d).
std::vector<Matrix> partition_heads(const Matrix& x, std::size_t heads);
Matrix merge_heads(const std::vector<Matrix>& parts);

/// (X_h W_q)^T X_h.
Matrix covariance_gram(const Matrix& x_head, const Matrix& w_q);
/// sigmoid(tau * G - b), elementwise.
Matrix sigmoid_gate(const Matrix& gram, double tau, double bias);

struct ValueTape {
  Matrix x;
  Matrix pre_gelu;
  Matrix hidden;
  LayerNormCache norm;
};

/// LayerNorm(gelu(X_h W_v1) W_v2), row-wise.
Matrix value_transform(const Matrix& x_head, const Matrix& w_v1, const Matrix& w_v2,
                       const Matrix& gamma, const Matrix& beta, ValueTape* tape = nullptr);

struct ValueGrads {
  Matrix dx;
  Matrix dw_v1;
  Matrix dw_v2;
  Matrix dgamma;
  Matrix dbeta;
};

ValueGrads value_transform_backward(const Matrix& upstream, const ValueTape& tape,
                                    const Matrix& w_v1, const Matrix& w_v2, const Matrix& gamma);

// ---------------------------------------------------------------------------
// Forward / backward.

struct IBHeadTape {
  Matrix query;
  Matrix gram;
  Matrix gate;
  Matrix value;
  ValueTape value_tape;  // holds the head input X_h
};

struct IBTape {
  std::vector<IBHeadTape> heads;
  bool recorded = false;
};

Matrix ib_adapter_forward(const Matrix& x, const IBAdapterParams& params, IBTape* tape = nullptr);
/// Accumulates parameter gradients; returns dL/dX.
Matrix ib_adapter_backward(const Matrix& upstream, const IBTape& tape, IBAdapterParams& params);

struct FusedTape {
  ProjectorKind kind = ProjectorKind::fused;
  Matrix x;
  Matrix mlp_pre;
  Matrix mlp_hidden;
  Matrix ib_out;
  IBTape ib;
  double tanh_lambda = 0.0;
  bool mlp_dropped = false;
  bool recorded = false;
};

/// Consumes exactly one rng draw in train mode for the fused kind.
Matrix fused_forward(const Matrix& x, const FusedParams& params, Mode mode, CounterRng& rng,
                     FusedTape* tape = nullptr);
/// Accumulates into every slot; returns dL/dX. Throws StateError without a recorded forward.
Matrix fused_backward(const Matrix& upstream, const FusedTape& tape, FusedParams& params);

/// MLP pathway alone: gelu(X W1) W2.
Matrix mlp_forward(const Matrix& x, const FusedParams& params);

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/manifest.json + <dir>/params.ibmat (concatenated IBMAT blocks).

struct Checkpoint {
  nlohmann::json metadata;
  std::map<std::string, Matrix> tensors;
};

void save_checkpoint(const std::filesystem::path& dir, std::span<const ParamSlot* const> slots,
                     const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Copies checkpoint tensors into matching slots; every slot must be present.
void restore_slots(const Checkpoint& ckpt, std::span<ParamSlot* const> slots);

nlohmann::json to_json(const AdapterConfig& config);
AdapterConfig adapter_config_from_json(const nlohmann::json& j);

}  // namespace ibkit
