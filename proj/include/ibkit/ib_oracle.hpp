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

// Iterative Information-Bottleneck clustering of feature channels, and the
// channel-attention form of one iterate.
//
// Each column c_j of X (N x D) is a data point. With p(s|j) = N(c_j, eps^2 I)
// and cluster models N(mu_c, Sigma) sharing one covariance, one step is
//
//   q(c|j)  ~  p(c) exp(-beta * KL_c(j)),   KL_c(j) = 1/2 [(c_j - mu_c)^T Sigma^-1 (c_j - mu_c) + log|Sigma|]
//   n_c = sum_j q(c|j),   p(c) = n_c / D,   mu_c = sum_j q(c|j) c_j / n_c
//
// (categorical: q normalised over clusters). In the Bernoulli variant each
// (j, c) pair is an independent on/off decision against an "off" energy b.
// When every centre satisfies mu_c^T Sigma^-1 mu_c = 1 the updated centres
// equal a channel-attention output, Z = V . Softmax(beta Q^T K) or
// Z = V . sigmoid(beta Q^T K - b), with Q = Sigma^-1 X and K the previous centres.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ibkit/tensor.hpp"

namespace ibkit::oracle {

enum class LatentKind { categorical, bernoulli };

std::string to_string(LatentKind kind);
/// Accepts "softmax"/"categorical" and "sigmoid"/"bernoulli".
LatentKind parse_latent_kind(const std::string& name);

/// SPD matrix with its Cholesky-derived inverse and log-determinant.
class SharedCovariance {
 public:
  SharedCovariance() = default;
  /// Throws NumericError if `sigma` is not symmetric positive definite.
  explicit SharedCovariance(Matrix sigma);

  const Matrix& sigma() const noexcept { return sigma_; }
  const Matrix& inverse() const noexcept { return inverse_; }
  double log_det() const noexcept { return log_det_; }
  std::size_t dim() const noexcept { return sigma_.rows(); }

  /// a^T Sigma^-1 b
  double bilinear(std::span<const double> a, std::span<const double> b) const;

 private:
  Matrix sigma_;
  Matrix inverse_;
  double log_det_ = 0.0;
};

struct IBProblem {
  Matrix channels;            // N x D, column j is c_j
  double beta = 1.0;
  double eps = 1e-6;
  std::size_t cluster_count = 0;  // 0 selects D

  std::size_t tokens() const noexcept { return channels.rows(); }
  std::size_t channel_count() const noexcept { return channels.cols(); }
  std::size_t clusters() const noexcept {
    return cluster_count == 0 ? channels.cols() : cluster_count;
  }
  /// Throws ValueError on beta <= 0, eps <= 0, non-finite channels or too many clusters.
  void validate() const;
};

struct IBState {
  std::vector<double> priors;   // p(c), sums to 1
  std::vector<double> masses;   // n_c
  Matrix centers;               // N x C, column c is mu_c
  SharedCovariance covariance;
  Matrix assignments;           // C x D, entry (c, j) is q(c|j)

  std::size_t clusters() const noexcept { return priors.size(); }
};

/// Column j of `m` as a vector.
std::vector<double> column(const Matrix& m, std::size_t j);

/// Empirical covariance of the channel vectors plus `ridge` * I.
Matrix channel_covariance(const Matrix& channels, double ridge = 1e-6);

/// Uniform priors, centres = the first C channels, Sigma = channel covariance + 1e-6 I,
/// assignments = priors.
IBState initial_state(const IBProblem& problem);

/// Rescales every centre so that mu_c^T Sigma^-1 mu_c = 1.
void normalize_centers(IBState& state);

/// 1/2 [(c - mu)^T Sigma^-1 (c - mu) + log|Sigma|].
double kl_gaussian_limit(std::span<const double> c, std::span<const double> mu,
                         const SharedCovariance& cov);
/// Convenience overload; factorises `sigma` (throws NumericError if not SPD).
double kl_gaussian_limit(std::span<const double> c, std::span<const double> mu,
                         const Matrix& sigma);

/// One categorical (Softmax) step. Throws NumericError when a column underflows.
IBState ib_iterate_categorical(const IBProblem& problem, const IBState& state);

/// One Bernoulli (Sigmoid) step with "off" energy `bias`:
/// q(a_jc = 1 | j) = p(c) * sigmoid(E_jc - bias), E_jc the centred energy
/// beta mu_c^T Sigma^-1 c_j - beta/2 (mu_c^T Sigma^-1 mu_c - 1).
IBState ib_iterate_bernoulli(const IBProblem& problem, const IBState& state, double bias);

IBState ib_iterate(const IBProblem& problem, const IBState& state, LatentKind kind,
                   double bias = 0.0);

struct IBRun {
  IBState state;
  int iterations = 0;
  double last_change = 0.0;
  bool converged = false;
};

/// Iterates until the largest assignment change drops below `tol` or `max_iter` steps.
IBRun ib_run(const IBProblem& problem, IBState state, LatentKind kind, double bias = 0.0,
             int max_iter = 100, double tol = 1e-8);

/// Channel-attention form of one iterate from `state`:
///   Q = Sigma^-1 X, K = state centres, W = Softmax_rows(beta Q^T K) or sigmoid(beta Q^T K - b),
///   V column-scaled by (n_c/D) / (n'_c |Sigma|^(beta/2)), with n'_c the masses this
///   step assigns, Z = V W.
/// Returns N x C; column c equals the updated centre mu_c.
Matrix attention_equivalent(const Matrix& x, const IBState& state, double beta, LatentKind kind,
                            double bias = 0.0);

struct EquivalenceOptions {
  std::size_t channels = 6;   // D
  std::size_t tokens = 4;     // N
  double beta = 1.0;
  double bias = 1.0;          // Bernoulli only
  bool normalized_centers = true;  // false stretches each centre by U(1.5, 2.5)
};

/// Builds a random instance (seeded), runs one iterate and the attention form,
/// and returns max |Z_iter - Z_attn|.
double equivalence_check(std::uint64_t seed, LatentKind kind,
                         const EquivalenceOptions& options = {});

}  // namespace ibkit::oracle
