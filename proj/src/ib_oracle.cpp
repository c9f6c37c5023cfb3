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

#include "ibkit/ib_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ibkit/errors.hpp"
#include "ibkit/random.hpp"

namespace ibkit::oracle {

std::string to_string(LatentKind kind) {
  return kind == LatentKind::categorical ? "softmax" : "sigmoid";
}

LatentKind parse_latent_kind(const std::string& name) {
  if (name == "softmax" || name == "categorical") return LatentKind::categorical;
  if (name == "sigmoid" || name == "bernoulli") return LatentKind::bernoulli;
  throw ValueError("unknown latent kind '" + name + "' (expected softmax or sigmoid)");
}

// ---------------------------------------------------------------------------

SharedCovariance::SharedCovariance(Matrix sigma) : sigma_(std::move(sigma)) {
  const std::size_t n = sigma_.rows();
  if (n == 0 || sigma_.cols() != n) {
    throw DimensionError("covariance must be square and non-empty, got " + sigma_.shape_string());
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double a = sigma_(i, j), b = sigma_(j, i);
      if (std::abs(a - b) > 1e-12 * std::max({1.0, std::abs(a), std::abs(b)})) {
        throw NumericError("covariance is not symmetric");
      }
    }
  }
  // Cholesky, lower triangle.
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = sigma_(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NumericError("covariance is not positive definite (Cholesky pivot " +
                         std::to_string(j) + ")");
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = sigma_(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  log_det_ = 0.0;
  for (std::size_t i = 0; i < n; ++i) log_det_ += 2.0 * std::log(l(i, i));

  // L^-1 by forward substitution, then Sigma^-1 = L^-T L^-1.
  Matrix li(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = c; i < n; ++i) {
      double s = i == c ? 1.0 : 0.0;
      for (std::size_t k = c; k < i; ++k) s -= l(i, k) * li(k, c);
      li(i, c) = s / l(i, i);
    }
  }
  inverse_ = matmul_tn(li, li);
  // Exact symmetry keeps the bilinear form symmetric in its arguments.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double avg = 0.5 * (inverse_(i, j) + inverse_(j, i));
      inverse_(i, j) = inverse_(j, i) = avg;
    }
  }
}

double SharedCovariance::bilinear(std::span<const double> a, std::span<const double> b) const {
  const std::size_t n = dim();
  if (a.size() != n || b.size() != n) {
    throw DimensionError("bilinear form expects vectors of length " + std::to_string(n));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t k = 0; k < n; ++k) row += inverse_(i, k) * b[k];
    acc += a[i] * row;
  }
  return acc;
}

// ---------------------------------------------------------------------------

void IBProblem::validate() const {
  if (channels.empty()) throw ValueError("IB problem has no channels");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ValueError("beta must be positive and finite");
  if (!(eps > 0.0)) throw ValueError("eps must be positive");
  if (!channels.all_finite()) throw NumericError("IB channels contain non-finite values");
  if (clusters() == 0 || clusters() > channel_count()) {
    throw ValueError("cluster count must be in [1, D]");
  }
}

std::vector<double> column(const Matrix& m, std::size_t j) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, j);
  return out;
}

Matrix channel_covariance(const Matrix& channels, double ridge) {
  const std::size_t n = channels.rows(), d = channels.cols();
  std::vector<double> centre(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centre[i] += channels(i, j);
    centre[i] /= static_cast<double>(d);
  }
  Matrix cov(n, n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t a = 0; a < n; ++a) {
      const double da = channels(a, j) - centre[a];
      for (std::size_t b = 0; b < n; ++b) cov(a, b) += da * (channels(b, j) - centre[b]);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) cov(a, b) /= static_cast<double>(d);
    cov(a, a) += ridge;
  }
  return cov;
}

IBState initial_state(const IBProblem& problem) {
  problem.validate();
  const std::size_t c = problem.clusters(), d = problem.channel_count(), n = problem.tokens();
  IBState s;
  s.priors.assign(c, 1.0 / static_cast<double>(c));
  s.masses.assign(c, static_cast<double>(d) / static_cast<double>(c));
  s.centers = Matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) s.centers(i, k) = problem.channels(i, k);
  }
  s.covariance = SharedCovariance(channel_covariance(problem.channels));
  s.assignments = Matrix(c, d);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < d; ++j) s.assignments(k, j) = s.priors[k];
  }
  return s;
}

void normalize_centers(IBState& state) {
  for (std::size_t c = 0; c < state.centers.cols(); ++c) {
    const auto mu = column(state.centers, c);
    const double q = state.covariance.bilinear(mu, mu);
    if (!(q > 0.0)) throw NumericError("cannot normalise a zero centre");
    const double s = 1.0 / std::sqrt(q);
    for (std::size_t i = 0; i < state.centers.rows(); ++i) state.centers(i, c) *= s;
  }
}

double kl_gaussian_limit(std::span<const double> c, std::span<const double> mu,
                         const SharedCovariance& cov) {
  if (c.size() != mu.size()) throw DimensionError("KL arguments differ in length");
  std::vector<double> diff(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) diff[i] = c[i] - mu[i];
  return 0.5 * (cov.bilinear(diff, diff) + cov.log_det());
}

double kl_gaussian_limit(std::span<const double> c, std::span<const double> mu,
                         const Matrix& sigma) {
  return kl_gaussian_limit(c, mu, SharedCovariance(sigma));
}

namespace {

void check_state(const IBProblem& problem, const IBState& state) {
  problem.validate();
  const std::size_t n = problem.tokens(), d = problem.channel_count(), c = state.clusters();
  if (state.centers.rows() != n || state.centers.cols() != c || state.masses.size() != c ||
      state.covariance.dim() != n) {
    throw DimensionError("IB state does not match the problem (N=" + std::to_string(n) +
                         ", D=" + std::to_string(d) + ")");
  }
}

// Masses, priors and centres from fresh assignments. Priors are masses over
// the total mass, which is D for the categorical step.
IBState finish_step(const IBProblem& problem, const IBState& prev, Matrix assignments) {
  const std::size_t n = problem.tokens(), d = problem.channel_count(), c = prev.clusters();
  IBState next;
  next.covariance = prev.covariance;
  next.masses.assign(c, 0.0);
  next.priors.assign(c, 0.0);
  next.centers = Matrix(n, c);
  double total = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    double mass = 0.0;
    for (std::size_t j = 0; j < d; ++j) mass += assignments(k, j);
    next.masses[k] = mass;
    total += mass;
    if (mass > 0.0) {
      for (std::size_t j = 0; j < d; ++j) {
        const double w = assignments(k, j);
        for (std::size_t i = 0; i < n; ++i) next.centers(i, k) += w * problem.channels(i, j);
      }
      for (std::size_t i = 0; i < n; ++i) next.centers(i, k) /= mass;
    } else {
      for (std::size_t i = 0; i < n; ++i) next.centers(i, k) = prev.centers(i, k);
    }
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericError("IB step assigned no mass; try a smaller beta");
  }
  for (std::size_t k = 0; k < c; ++k) next.priors[k] = next.masses[k] / total;
  next.assignments = std::move(assignments);
  return next;
}

}  // namespace

IBState ib_iterate_categorical(const IBProblem& problem, const IBState& state) {
  check_state(problem, state);
  const std::size_t d = problem.channel_count(), c = state.clusters();
  Matrix q(c, d);
  std::vector<double> logits(c);
  for (std::size_t j = 0; j < d; ++j) {
    const auto cj = column(problem.channels, j);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
      const auto mu = column(state.centers, k);
      logits[k] = std::log(state.priors[k]) -
                  problem.beta * kl_gaussian_limit(cj, mu, state.covariance);
      if (std::isnan(logits[k])) {
        throw NumericError("IB energy is NaN for channel " + std::to_string(j) +
                           "; try a smaller beta");
      }
      top = std::max(top, logits[k]);
    }
    if (!std::isfinite(top)) {
      std::ostringstream msg;
      msg << "IB posterior underflow for channel " << j << " at beta=" << problem.beta
          << "; try a smaller beta";
      throw NumericError(msg.str());
    }
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(logits[k] - top);
    for (std::size_t k = 0; k < c; ++k) q(k, j) = std::exp(logits[k] - top) / z;
  }
  return finish_step(problem, state, std::move(q));
}

IBState ib_iterate_bernoulli(const IBProblem& problem, const IBState& state, double bias) {
  check_state(problem, state);
  const std::size_t d = problem.channel_count(), c = state.clusters();
  const double beta = problem.beta, log_det = state.covariance.log_det();
  Matrix q(c, d);
  for (std::size_t j = 0; j < d; ++j) {
    const auto cj = column(problem.channels, j);
    const double self = state.covariance.bilinear(cj, cj);
    for (std::size_t k = 0; k < c; ++k) {
      const auto mu = column(state.centers, k);
      // -beta KL plus the cluster-independent part of beta KL at unit-norm centres.
      const double energy = -beta * kl_gaussian_limit(cj, mu, state.covariance) +
                            0.5 * beta * (self + log_det + 1.0);
      if (!std::isfinite(energy)) {
        throw NumericError("IB energy is not finite for channel " + std::to_string(j) +
                           "; try a smaller beta");
      }
      q(k, j) = state.priors[k] * sigmoid(energy - bias);
    }
  }
  return finish_step(problem, state, std::move(q));
}

IBState ib_iterate(const IBProblem& problem, const IBState& state, LatentKind kind, double bias) {
  return kind == LatentKind::categorical ? ib_iterate_categorical(problem, state)
                                         : ib_iterate_bernoulli(problem, state, bias);
}

IBRun ib_run(const IBProblem& problem, IBState state, LatentKind kind, double bias, int max_iter,
             double tol) {
  IBRun run;
  run.state = std::move(state);
  for (int it = 0; it < max_iter; ++it) {
    IBState next = ib_iterate(problem, run.state, kind, bias);
    run.last_change = max_abs_diff(next.assignments, run.state.assignments);
    run.state = std::move(next);
    run.iterations = it + 1;
    if (run.last_change < tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

Matrix attention_equivalent(const Matrix& x, const IBState& state, double beta, LatentKind kind,
                            double bias) {
  const std::size_t n = x.rows(), d = x.cols(), c = state.clusters();
  if (state.covariance.dim() != n || state.centers.rows() != n || state.centers.cols() != c ||
      state.masses.size() != c) {
    throw DimensionError("attention form: X is " + x.shape_string() + " but the state has N=" +
                         std::to_string(state.covariance.dim()) + ", C=" + std::to_string(c));
  }
  if (!(beta > 0.0)) throw ValueError("beta must be positive");

  const Matrix q = matmul(state.covariance.inverse(), x);  // N x D
  const Matrix logits = scale(matmul_tn(q, state.centers), beta);  // D x C
  Matrix w;
  if (kind == LatentKind::categorical) {
    w = activate(Activation::softmax_rows, logits);
  } else {
    Matrix shifted = logits;
    for (double& v : shifted.data()) v -= bias;
    w = activate(Activation::sigmoid, shifted);
  }

  // Masses as they come out of the derivation: prior times |Sigma|^(-beta/2)
  // times the attention weight.
  const double det_pow = std::exp(0.5 * beta * state.covariance.log_det());
  const double dd = static_cast<double>(d);
  std::vector<double> col_scale(c);
  for (std::size_t k = 0; k < c; ++k) {
    const double prior = state.masses[k] / dd;
    double mass = 0.0;
    for (std::size_t j = 0; j < d; ++j) mass += prior / det_pow * w(j, k);
    if (!(mass > 0.0) || !std::isfinite(mass)) {
      throw NumericError("attention form: cluster " + std::to_string(k) + " has no mass");
    }
    col_scale[k] = prior / (mass * det_pow);
  }
  Matrix z = matmul(x, w);  // N x C
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) z(i, k) *= col_scale[k];
  }
  return z;
}

double equivalence_check(std::uint64_t seed, LatentKind kind, const EquivalenceOptions& options) {
  CounterRng rng(seed, 0x1b0);
  IBProblem problem;
  problem.channels = Matrix::randn(options.tokens, options.channels, rng);
  problem.beta = options.beta;
  IBState state = initial_state(problem);
  normalize_centers(state);
  if (!options.normalized_centers) {
    // Negative control: per-centre stretch so that mu^T Sigma^-1 mu is in [2.25, 6.25].
    for (std::size_t c = 0; c < state.centers.cols(); ++c) {
      const double stretch = rng.uniform(1.5, 2.5);
      for (std::size_t i = 0; i < state.centers.rows(); ++i) state.centers(i, c) *= stretch;
    }
  }
  const IBState next = ib_iterate(problem, state, kind, options.bias);
  const Matrix z = attention_equivalent(problem.channels, state, problem.beta, kind, options.bias);
  return max_abs_diff(next.centers, z);
}

}  // namespace ibkit::oracle
