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

// Small constructed instances shared by the tests, the acceptance suite and
// the command-line tool.

#include <cstdint>
#include <functional>
#include <vector>

#include "ibkit/adapter.hpp"
#include "ibkit/tensor.hpp"

namespace ibkit::scenarios {

struct GateCoupling {
  double noise_mean = 0.0;     // entries (i, noise) and (noise, i)
  double semantic_mean = 0.0;  // off-diagonal entries among semantic channels
};

/// d-1 channels are positively scaled copies of one latent signal plus a small
/// perturbation; the last channel is independent zero-mean noise. Gate with
/// W_q = I, tau = 1, b = 0.
inline GateCoupling gate_coupling_trial(std::uint64_t seed, std::size_t n = 256,
                                        std::size_t d = 4) {
  CounterRng rng(seed, 0x5eed);
  std::vector<double> scales(d - 1);
  for (double& s : scales) s = rng.uniform(0.5, 1.5);
  Matrix x(n, d);
  for (std::size_t t = 0; t < n; ++t) {
    const double latent = rng.normal();
    for (std::size_t i = 0; i + 1 < d; ++i) x(t, i) = scales[i] * latent + 0.1 * rng.normal();
    x(t, d - 1) = rng.normal();
  }
  const Matrix gate = sigmoid_gate(covariance_gram(x, Matrix::identity(d)), 1.0, 0.0);
  GateCoupling out;
  std::size_t n_noise = 0, n_sem = 0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (i == j) continue;
      if (i == d - 1 || j == d - 1) {
        out.noise_mean += gate(i, j);
        ++n_noise;
      } else {
        out.semantic_mean += gate(i, j);
        ++n_sem;
      }
    }
  }
  out.noise_mean /= static_cast<double>(n_noise);
  out.semantic_mean /= static_cast<double>(n_sem);
  return out;
}

/// Loss used by the gradient checks: mean of all entries of Z.
struct FusedGradcheckSetup {
  FusedParams params;
  ParamSlot input;
  Mode mode = Mode::infer;
  std::uint64_t rng_seed = 0;

  std::vector<ParamSlot*> slots() {
    auto s = params.slots();
    s.push_back(&input);
    return s;
  }

  double loss() {
    CounterRng rng(rng_seed, 99);
    return mean(fused_forward(input.value(), params, mode, rng));
  }

  /// Forward + backward, leaving analytic gradients in every slot.
  void compute_gradients() {
    params.zero_grad();
    input.zero_grad();
    CounterRng rng(rng_seed, 99);
    FusedTape tape;
    const Matrix z = fused_forward(input.value(), params, mode, rng, &tape);
    const Matrix upstream(z.rows(), z.cols(), 1.0 / static_cast<double>(z.size()));
    input.accumulate(fused_backward(upstream, tape, params));
  }
};

inline FusedGradcheckSetup make_fused_setup(std::uint64_t seed, std::size_t n, std::size_t dim,
                                            std::size_t heads, std::size_t hidden,
                                            double init_std = 0.02) {
  AdapterConfig cfg;
  cfg.dim = dim;
  cfg.heads = heads;
  cfg.hidden = hidden;
  cfg.init_std = init_std;
  CounterRng rng(seed);
  FusedGradcheckSetup s{FusedParams(cfg, rng), ParamSlot("input", Matrix::randn(n, dim, rng)),
                        Mode::infer, seed};
  return s;
}

/// Full fused-adapter gradient check with loss = mean(Z), infer mode.
inline GradcheckReport fused_gradcheck(std::uint64_t seed, std::size_t n = 8, std::size_t dim = 16,
                                       std::size_t heads = 4, std::size_t hidden = 64,
                                       double h = 1e-5) {
  auto s = make_fused_setup(seed, n, dim, heads, hidden);
  s.compute_gradients();
  auto slots = s.slots();
  return finite_diff_gradcheck(slots, [&] { return s.loss(); }, h);
}

}  // namespace ibkit::scenarios
