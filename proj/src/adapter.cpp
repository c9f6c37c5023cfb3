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

#include "ibkit/adapter.hpp"

#include <cmath>

#include "ibkit/errors.hpp"

namespace ibkit {

std::string to_string(ProjectorKind kind) {
  switch (kind) {
    case ProjectorKind::mlp: return "mlp";
    case ProjectorKind::ib: return "ib";
    case ProjectorKind::fused: return "fused";
  }
  return "fused";
}

ProjectorKind parse_projector_kind(const std::string& name) {
  if (name == "mlp") return ProjectorKind::mlp;
  if (name == "ib") return ProjectorKind::ib;
  if (name == "fused") return ProjectorKind::fused;
  throw ValueError("unknown model kind '" + name + "' (expected mlp, ib or fused)");
}

IBAdapterParams::IBAdapterParams(std::size_t dim, std::size_t heads, CounterRng& rng,
                                 double tau_init, double bias_init, double init_std)
    : dim_(dim) {
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    throw DimensionError("IB-Adapter: dim " + std::to_string(dim) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  }
  head_dim_ = dim / heads;
  const std::size_t d = head_dim_;
  const double tau = tau_init < 0.0 ? 1.0 / std::sqrt(static_cast<double>(d)) : tau_init;
  this->heads.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string p = "ib.h" + std::to_string(h) + ".";
    IBHead head{
        ParamSlot(p + "w_q", Matrix::randn(d, d, rng, init_std)),
        ParamSlot(p + "tau", Matrix::scalar(tau)),
        ParamSlot(p + "bias", Matrix::scalar(bias_init)),
        ParamSlot(p + "w_v1", Matrix::randn(d, d, rng, init_std)),
        ParamSlot(p + "w_v2", Matrix::randn(d, d, rng, init_std)),
        ParamSlot(p + "norm_gamma", Matrix(1, d, 1.0)),
        ParamSlot(p + "norm_beta", Matrix(1, d, 0.0)),
    };
    this->heads.push_back(std::move(head));
  }
}

void IBAdapterParams::collect(std::vector<ParamSlot*>& out) {
  for (IBHead& h : heads) {
    for (ParamSlot* s : {&h.w_q, &h.tau, &h.bias, &h.w_v1, &h.w_v2, &h.norm_gamma, &h.norm_beta}) {
      out.push_back(s);
    }
  }
}

void IBAdapterParams::zero_grad() {
  std::vector<ParamSlot*> all;
  collect(all);
  for (ParamSlot* s : all) s->zero_grad();
}

FusedParams::FusedParams(const AdapterConfig& config, CounterRng& rng)
    : ib(config.dim, config.heads, rng, config.tau_init, config.bias_init, config.init_std),
      kind_(config.kind) {
  const std::size_t hidden = config.hidden == 0 ? 4 * config.dim : config.hidden;
  mlp_w1 = ParamSlot("mlp.w1", Matrix::randn(config.dim, hidden, rng, config.init_std));
  mlp_w2 = ParamSlot("mlp.w2", Matrix::randn(hidden, config.dim, rng, config.init_std));
  lambda = ParamSlot("lambda", Matrix::scalar(config.lambda_init));
  set_p_drop(config.p_drop);
}

void FusedParams::set_p_drop(double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValueError("p_drop must lie in [0, 1], got " + std::to_string(p));
  }
  p_drop_ = p;
}

std::vector<ParamSlot*> FusedParams::slots() {
  std::vector<ParamSlot*> out;
  if (kind_ != ProjectorKind::mlp) ib.collect(out);
  if (kind_ != ProjectorKind::ib) {
    out.push_back(&mlp_w1);
    out.push_back(&mlp_w2);
  }
  if (kind_ == ProjectorKind::fused) out.push_back(&lambda);
  return out;
}

std::vector<const ParamSlot*> FusedParams::slots() const {
  auto mut = const_cast<FusedParams*>(this)->slots();
  return {mut.begin(), mut.end()};
}

void FusedParams::zero_grad() {
  for (ParamSlot* s : slots()) s->zero_grad();
}

// ---------------------------------------------------------------------------

std::vector<Matrix> partition_heads(const Matrix& x, std::size_t heads) {
  if (heads == 0 || x.cols() % heads != 0) {
    throw DimensionError("partition_heads: " + std::to_string(x.cols()) +
                         " channels are not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t d = x.cols() / heads;
  std::vector<Matrix> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) parts.push_back(slice_cols(x, h * d, (h + 1) * d));
  return parts;
}

Matrix merge_heads(const std::vector<Matrix>& parts) {
  if (parts.empty()) throw DimensionError("merge_heads: no heads");
  std::size_t cols = 0;
  for (const Matrix& p : parts) {
    if (p.rows() != parts.front().rows()) throw DimensionError("merge_heads: row mismatch");
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  std::size_t at = 0;
  for (const Matrix& p : parts) {
    assign_cols(out, at, p);
    at += p.cols();
  }
  return out;
}

Matrix covariance_gram(const Matrix& x_head, const Matrix& w_q) {
  return matmul_tn(matmul(x_head, w_q), x_head);
}

Matrix sigmoid_gate(const Matrix& gram, double tau, double bias) {
  Matrix a = gram;
  for (double& v : a.data()) v = sigmoid(tau * v - bias);
  return a;
}

Matrix value_transform(const Matrix& x_head, const Matrix& w_v1, const Matrix& w_v2,
                       const Matrix& gamma, const Matrix& beta, ValueTape* tape) {
  Matrix pre = matmul(x_head, w_v1);
  Matrix hidden = gelu(pre);
  LayerNormCache cache;
  Matrix out = layer_norm_rows(matmul(hidden, w_v2), gamma, beta, kLayerNormEps,
                               tape != nullptr ? &cache : nullptr);
  if (tape != nullptr) {
    tape->x = x_head;
    tape->pre_gelu = std::move(pre);
    tape->hidden = std::move(hidden);
    tape->norm = std::move(cache);
  }
  return out;
}

ValueGrads value_transform_backward(const Matrix& upstream, const ValueTape& tape,
                                    const Matrix& w_v1, const Matrix& w_v2, const Matrix& gamma) {
  LayerNormGrads ln = layer_norm_rows_backward(upstream, gamma, tape.norm);
  ValueGrads g;
  g.dgamma = std::move(ln.dgamma);
  g.dbeta = std::move(ln.dbeta);
  g.dw_v2 = matmul_tn(tape.hidden, ln.dx);
  const Matrix dpre = gelu_backward(tape.pre_gelu, matmul_nt(ln.dx, w_v2));
  g.dw_v1 = matmul_tn(tape.x, dpre);
  g.dx = matmul_nt(dpre, w_v1);
  return g;
}

// ---------------------------------------------------------------------------

Matrix ib_adapter_forward(const Matrix& x, const IBAdapterParams& params, IBTape* tape) {
  if (x.cols() != params.dim()) {
    throw DimensionError("ib_adapter_forward: input " + x.shape_string() + " but adapter dim " +
                         std::to_string(params.dim()));
  }
  const std::size_t d = params.head_dim();
  Matrix z(x.rows(), x.cols());
  if (tape != nullptr) {
    tape->heads.clear();
    tape->heads.reserve(params.head_count());
  }
  for (std::size_t h = 0; h < params.head_count(); ++h) {
    const IBHead& p = params.heads[h];
    IBHeadTape t;
    const Matrix xh = slice_cols(x, h * d, (h + 1) * d);
    t.query = matmul(xh, p.w_q.value());
    t.gram = matmul_tn(t.query, xh);
    require_finite(t.gram, "gram");
    t.gate = sigmoid_gate(t.gram, p.tau.value().item(), p.bias.value().item());
    require_finite(t.gate, "gate");
    t.value = value_transform(xh, p.w_v1.value(), p.w_v2.value(), p.norm_gamma.value(),
                              p.norm_beta.value(), &t.value_tape);
    require_finite(t.value, "value");
    assign_cols(z, h * d, matmul(t.value, t.gate));
    if (tape != nullptr) tape->heads.push_back(std::move(t));
  }
  if (tape != nullptr) tape->recorded = true;
  return z;
}

Matrix ib_adapter_backward(const Matrix& upstream, const IBTape& tape, IBAdapterParams& params) {
  if (!tape.recorded) throw StateError("ib_adapter_backward called without a recorded forward");
  if (tape.heads.size() != params.head_count()) {
    throw StateError("ib_adapter_backward: tape does not match the adapter's head count");
  }
  const std::size_t d = params.head_dim();
  Matrix dx(upstream.rows(), upstream.cols());
  for (std::size_t h = 0; h < params.head_count(); ++h) {
    IBHead& p = params.heads[h];
    const IBHeadTape& t = tape.heads[h];
    const Matrix dz = slice_cols(upstream, h * d, (h + 1) * d);

    // Z = V A
    const Matrix dv = matmul_nt(dz, t.gate);
    const Matrix da = matmul_tn(t.value, dz);

    // A = sigmoid(tau G - b)
    const double tau = p.tau.value().item();
    Matrix ds = da;
    {
      auto sd = ds.data();
      auto ad = t.gate.data();
      for (std::size_t i = 0; i < sd.size(); ++i) sd[i] *= ad[i] * (1.0 - ad[i]);
    }
    p.tau.accumulate_scalar(dot(ds, t.gram));
    p.bias.accumulate_scalar(-sum(ds));
    const Matrix dg = scale(ds, tau);

    // G = Q^T X, Q = X W_q
    const Matrix& xh = t.value_tape.x;
    const Matrix dq = matmul_nt(xh, dg);
    Matrix dxh = matmul(t.query, dg);
    p.w_q.accumulate(matmul_tn(xh, dq));
    axpy(dxh, 1.0, matmul_nt(dq, p.w_q.value()));

    // V = LN(gelu(X W_v1) W_v2)
    ValueGrads vg = value_transform_backward(dv, t.value_tape, p.w_v1.value(), p.w_v2.value(),
                                             p.norm_gamma.value());
    p.norm_gamma.accumulate(vg.dgamma);
    p.norm_beta.accumulate(vg.dbeta);
    p.w_v2.accumulate(vg.dw_v2);
    p.w_v1.accumulate(vg.dw_v1);
    axpy(dxh, 1.0, vg.dx);

    assign_cols(dx, h * d, dxh);
  }
  return dx;
}

Matrix mlp_forward(const Matrix& x, const FusedParams& params) {
  return matmul(gelu(matmul(x, params.mlp_w1.value())), params.mlp_w2.value());
}

Matrix fused_forward(const Matrix& x, const FusedParams& params, Mode mode, CounterRng& rng,
                     FusedTape* tape) {
  if (x.cols() != params.dim()) {
    throw DimensionError("fused_forward: input " + x.shape_string() + " but adapter dim " +
                         std::to_string(params.dim()));
  }
  const ProjectorKind kind = params.kind();
  FusedTape local;
  FusedTape& t = tape != nullptr ? *tape : local;
  t = FusedTape{};
  t.kind = kind;
  if (tape != nullptr) t.x = x;

  bool drop = false;
  if (kind == ProjectorKind::fused && mode == Mode::train) drop = rng.bernoulli(params.p_drop());
  t.mlp_dropped = drop;

  const bool use_mlp = kind != ProjectorKind::ib && !drop;
  const bool use_ib = kind != ProjectorKind::mlp;

  Matrix z(x.rows(), x.cols());
  if (use_mlp) {
    t.mlp_pre = matmul(x, params.mlp_w1.value());
    t.mlp_hidden = gelu(t.mlp_pre);
    z = matmul(t.mlp_hidden, params.mlp_w2.value());
    require_finite(z, "mlp");
  }
  if (use_ib) {
    t.ib_out = ib_adapter_forward(x, params.ib, tape != nullptr ? &t.ib : nullptr);
    const double gain = kind == ProjectorKind::fused ? std::tanh(params.lambda.value().item()) : 1.0;
    t.tanh_lambda = gain;
    if (use_mlp) {
      if (gain != 0.0) axpy(z, gain, t.ib_out);
    } else {
      z = scale(t.ib_out, gain);
    }
  }
  t.recorded = tape != nullptr;
  return z;
}

Matrix fused_backward(const Matrix& upstream, const FusedTape& tape, FusedParams& params) {
  if (!tape.recorded) throw StateError("fused_backward called without a recorded forward");
  if (tape.kind != params.kind()) throw StateError("fused_backward: tape/parameter kind mismatch");
  if (!upstream.same_shape(tape.x)) {
    throw DimensionError("fused_backward: upstream " + upstream.shape_string() + " vs input " +
                         tape.x.shape_string());
  }
  const ProjectorKind kind = tape.kind;
  Matrix dx(upstream.rows(), upstream.cols());

  if (kind != ProjectorKind::ib && !tape.mlp_dropped) {
    params.mlp_w2.accumulate(matmul_tn(tape.mlp_hidden, upstream));
    const Matrix dpre = gelu_backward(tape.mlp_pre, matmul_nt(upstream, params.mlp_w2.value()));
    params.mlp_w1.accumulate(matmul_tn(tape.x, dpre));
    dx = matmul_nt(dpre, params.mlp_w1.value());
  }
  if (kind != ProjectorKind::mlp) {
    if (kind == ProjectorKind::fused) {
      const double th = tape.tanh_lambda;
      params.lambda.accumulate_scalar((1.0 - th * th) * dot(upstream, tape.ib_out));
    }
    axpy(dx, 1.0, ib_adapter_backward(scale(upstream, tape.tanh_lambda), tape.ib, params.ib));
  }
  return dx;
}

}  // namespace ibkit
