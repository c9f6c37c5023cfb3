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

#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include "doctest.h"

#include "ibkit/errors.hpp"
#include "ibkit/ib_oracle.hpp"
#include "ibkit/random.hpp"

using namespace ibkit;
using namespace ibkit::oracle;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

Matrix random_spd(std::size_t n, CounterRng& rng) {
  const Matrix a = Matrix::randn(n, n, rng);
  Matrix s = matmul_nt(a, a);
  for (std::size_t i = 0; i < n; ++i) s(i, i) += 0.5;
  return s;
}

IBProblem random_problem(std::uint64_t seed, std::size_t n, std::size_t d, double beta = 1.0) {
  CounterRng rng(seed, 3);
  IBProblem p;
  p.channels = Matrix::randn(n, d, rng);
  p.beta = beta;
  return p;
}

// Plain loops over the definition, no shared helpers beyond Sigma^-1 and log|Sigma|.
struct LoopStep {
  std::vector<std::vector<double>> q;  // [c][j]
  std::vector<double> mass;
  std::vector<std::vector<double>> mu;  // [c][i]
};

LoopStep loop_step(const IBProblem& p, const IBState& s, bool categorical, double bias) {
  const std::size_t n = p.tokens(), d = p.channel_count(), nc = s.clusters();
  const Matrix& inv = s.covariance.inverse();
  const double logdet = s.covariance.log_det();
  auto quad = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) acc += a[i] * inv(i, k) * b[k];
    return acc;
  };
  LoopStep out;
  out.q.assign(nc, std::vector<double>(d, 0.0));
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> cj(n);
    for (std::size_t i = 0; i < n; ++i) cj[i] = p.channels(i, j);
    double z = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      std::vector<double> diff(n), mu(n);
      for (std::size_t i = 0; i < n; ++i) {
        mu[i] = s.centers(i, c);
        diff[i] = cj[i] - mu[i];
      }
      const double kl = 0.5 * (quad(diff, diff) + logdet);
      if (categorical) {
        out.q[c][j] = s.priors[c] * std::exp(-p.beta * kl);
        z += out.q[c][j];
      } else {
        const double e = -p.beta * kl + 0.5 * p.beta * (quad(cj, cj) + logdet + 1.0);
        out.q[c][j] = s.priors[c] / (1.0 + std::exp(-(e - bias)));
      }
    }
    if (categorical)
      for (std::size_t c = 0; c < nc; ++c) out.q[c][j] /= z;
  }
  out.mass.assign(nc, 0.0);
  out.mu.assign(nc, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < nc; ++c) {
    for (std::size_t j = 0; j < d; ++j) out.mass[c] += out.q[c][j];
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < n; ++i) out.mu[c][i] += out.q[c][j] * p.channels(i, j);
    for (std::size_t i = 0; i < n; ++i) out.mu[c][i] /= out.mass[c];
  }
  return out;
}

void check_against_loops(const IBProblem& p, const IBState& s, const IBState& next,
                         bool categorical, double bias) {
  const LoopStep ref = loop_step(p, s, categorical, bias);
  double worst = 0.0;
  for (std::size_t c = 0; c < s.clusters(); ++c) {
    worst = std::max(worst, std::abs(next.masses[c] - ref.mass[c]));
    for (std::size_t j = 0; j < p.channel_count(); ++j)
      worst = std::max(worst, std::abs(next.assignments(c, j) - ref.q[c][j]));
    for (std::size_t i = 0; i < p.tokens(); ++i)
      worst = std::max(worst, std::abs(next.centers(i, c) - ref.mu[c][i]));
  }
  CHECK(worst < 1e-12);
}

}  // namespace

TEST_CASE("shared covariance factorisation agrees with a dense solver") {
  CounterRng rng(4);
  for (std::size_t n : {1u, 3u, 6u}) {
    const Matrix s = random_spd(n, rng);
    const SharedCovariance cov(s);
    const Eigen::MatrixXd e = to_eigen(s);
    CHECK(cov.log_det() == doctest::Approx(std::log(e.determinant())).epsilon(1e-12));
    CHECK((to_eigen(cov.inverse()) - e.inverse()).cwiseAbs().maxCoeff() < 1e-10);
    const Matrix prod = matmul(cov.inverse(), s);
    CHECK(max_abs_diff(prod, Matrix::identity(n)) < 1e-10);
  }
}

TEST_CASE("shared covariance rejects bad input") {
  CHECK_THROWS_AS(SharedCovariance(Matrix(2, 3)), DimensionError);
  CHECK_THROWS_AS(SharedCovariance(Matrix::from_rows({{1, 2}, {2, 1}})), NumericError);
  CHECK_THROWS_AS(SharedCovariance(Matrix::from_rows({{1, 0.5}, {0.2, 1}})), NumericError);
}

TEST_CASE("KL limit matches the full Gaussian KL minus its eps terms") {
  const std::size_t n = 3;
  const double eps = 1e-6;
  CounterRng rng(9);
  const Matrix sigma = random_spd(n, rng);
  const Matrix c = Matrix::randn(n, 1, rng), mu = Matrix::randn(n, 1, rng);

  // KL(N(c, eps^2 I) || N(mu, Sigma)) via Eigen.
  const Eigen::MatrixXd s = to_eigen(sigma);
  const Eigen::MatrixXd si = s.inverse();
  const Eigen::VectorXd diff = to_eigen(c) - to_eigen(mu);
  const double nn = static_cast<double>(n);
  const double full = 0.5 * (eps * eps * si.trace() + diff.dot(si * diff) - nn +
                             std::log(s.determinant()) - nn * std::log(eps * eps));
  const double eps_terms = 0.5 * (-nn - nn * std::log(eps * eps));

  const double limit = kl_gaussian_limit(c.data(), mu.data(), sigma);
  CHECK(std::abs((full - eps_terms) - limit) < 1e-6);
  // The overload on a prepared factorisation agrees.
  CHECK(kl_gaussian_limit(c.data(), mu.data(), SharedCovariance(sigma)) == limit);
}

TEST_CASE("KL limit at the centre is half the log-determinant") {
  const Matrix sigma = Matrix::from_rows({{2.0, 0.0}, {0.0, 3.0}});
  const std::vector<double> v{0.4, -1.2};
  CHECK(kl_gaussian_limit(v, v, sigma) == doctest::Approx(0.5 * std::log(6.0)).epsilon(1e-14));
  CHECK_THROWS_AS(kl_gaussian_limit(v, std::vector<double>{1.0}, sigma), DimensionError);
}

TEST_CASE("initial state") {
  const IBProblem p = random_problem(1, 4, 6);
  const IBState s = initial_state(p);
  REQUIRE(s.clusters() == 6);
  for (double pr : s.priors) CHECK(pr == doctest::Approx(1.0 / 6.0));
  CHECK(std::accumulate(s.masses.begin(), s.masses.end(), 0.0) == doctest::Approx(6.0));
  CHECK(s.centers == p.channels);
  CHECK(max_abs_diff(s.covariance.sigma(), channel_covariance(p.channels)) == 0.0);

  IBState n = s;
  normalize_centers(n);
  for (std::size_t c = 0; c < n.clusters(); ++c) {
    const auto mu = column(n.centers, c);
    CHECK(n.covariance.bilinear(mu, mu) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("problem validation") {
  IBProblem p = random_problem(2, 3, 4);
  p.beta = 0.0;
  CHECK_THROWS_AS(p.validate(), ValueError);
  p.beta = 1.0;
  p.cluster_count = 5;
  CHECK_THROWS_AS(p.validate(), ValueError);
  p.cluster_count = 0;
  p.channels(0, 0) = std::nan("");
  CHECK_THROWS_AS(p.validate(), NumericError);
}

TEST_CASE("categorical step matches scalar loops") {
  const IBProblem p = random_problem(11, 4, 6);
  IBState s = initial_state(p);
  check_against_loops(p, s, ib_iterate_categorical(p, s), true, 0.0);
  // A second step starts from non-uniform priors.
  const IBState s1 = ib_iterate_categorical(p, s);
  check_against_loops(p, s1, ib_iterate_categorical(p, s1), true, 0.0);
}

TEST_CASE("bernoulli step matches scalar loops") {
  const IBProblem p = random_problem(11, 4, 6);
  IBState s = initial_state(p);
  normalize_centers(s);
  check_against_loops(p, s, ib_iterate_bernoulli(p, s, 1.0), false, 1.0);
}

TEST_CASE("categorical posteriors are distributions and mass is conserved") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const IBProblem p = random_problem(seed, 5, 8, 0.5 + 0.1 * static_cast<double>(seed));
    IBState s = initial_state(p);
    for (int step = 0; step < 3; ++step) {
      s = ib_iterate_categorical(p, s);
      for (std::size_t j = 0; j < 8; ++j) {
        double col = 0.0;
        for (std::size_t c = 0; c < s.clusters(); ++c) {
          CHECK(s.assignments(c, j) >= 0.0);
          col += s.assignments(c, j);
        }
        CHECK(std::abs(col - 1.0) < 1e-12);
      }
      const double total = std::accumulate(s.masses.begin(), s.masses.end(), 0.0);
      CHECK(std::abs(total - 8.0) < 1e-9);
      CHECK(std::abs(std::accumulate(s.priors.begin(), s.priors.end(), 0.0) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("bernoulli priors stay normalised") {
  const IBProblem p = random_problem(5, 4, 6);
  IBState s = initial_state(p);
  normalize_centers(s);
  s = ib_iterate_bernoulli(p, s, 0.5);
  CHECK(std::abs(std::accumulate(s.priors.begin(), s.priors.end(), 0.0) - 1.0) < 1e-12);
  for (double v : s.assignments.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("vanishing beta returns the prior") {
  const IBProblem base = random_problem(6, 4, 5);
  IBProblem p = base;
  p.beta = 1e-300;
  IBState s = initial_state(p);
  const std::vector<double> prior{0.1, 0.15, 0.2, 0.25, 0.3};
  s.priors = prior;
  const IBState next = ib_iterate_categorical(p, s);
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t j = 0; j < 5; ++j)
      CHECK(next.assignments(c, j) == doctest::Approx(prior[c]).epsilon(1e-14));
}

TEST_CASE("bernoulli gate is one half at the decision boundary") {
  // Sigma = I, unit centre mu = e_1, channel with mu^T c = b / beta.
  const double beta = 2.0, bias = 0.7;
  IBProblem p;
  p.channels = Matrix::from_rows({{bias / beta, 0.0}, {0.3, 1.0}});
  p.beta = beta;
  IBState s = initial_state(p);
  s.covariance = SharedCovariance(Matrix::identity(2));
  s.centers = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  s.priors = {0.4, 0.6};
  const IBState next = ib_iterate_bernoulli(p, s, bias);
  CHECK(next.assignments(0, 0) == doctest::Approx(0.4 * 0.5).epsilon(1e-14));
}

TEST_CASE("huge beta reports underflow") {
  IBProblem p = random_problem(7, 3, 4);
  for (double& v : p.channels.data()) v *= 100.0;
  p.beta = 1e308;
  const IBState s = initial_state(p);
  REQUIRE(s.covariance.log_det() > 0.0);
  try {
    (void)ib_iterate_categorical(p, s);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("smaller beta") != std::string::npos);
  }
}

TEST_CASE("one step equals the attention form with unit-norm centres") {
  for (LatentKind kind : {LatentKind::categorical, LatentKind::bernoulli}) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      worst = std::max(worst, equivalence_check(seed, kind));
    }
    INFO(to_string(kind));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("attention form diverges without the unit-norm constraint") {
  EquivalenceOptions opt;
  opt.normalized_centers = false;
  double smallest = 1.0;
  int sigmoid_hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    smallest = std::min(smallest, equivalence_check(seed, LatentKind::categorical, opt));
    if (equivalence_check(seed, LatentKind::bernoulli, opt) > 1e-3) ++sigmoid_hits;
  }
  CHECK(smallest > 1e-3);
  // Saturated gates (all near 1) hide the per-centre offset, so a few sigmoid
  // instances agree anyway.
  CHECK(sigmoid_hits >= 95);
}

TEST_CASE("attention form checks dimensions") {
  const IBProblem p = random_problem(8, 4, 6);
  const IBState s = initial_state(p);
  CHECK_THROWS_AS(attention_equivalent(Matrix(3, 6), s, 1.0, LatentKind::categorical),
                  DimensionError);
}

TEST_CASE("clustering is equivariant to channel permutations") {
  const std::size_t n = 4, d = 6;
  const IBProblem p = random_problem(12, n, d, 0.8);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};  // channel j moves to perm[j]
  IBProblem pp = p;
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < n; ++i) pp.channels(i, perm[j]) = p.channels(i, j);

  for (LatentKind kind : {LatentKind::categorical, LatentKind::bernoulli}) {
    const IBRun a = ib_run(p, initial_state(p), kind, 0.5, 5);
    const IBRun b = ib_run(pp, initial_state(pp), kind, 0.5, 5);
    double worst = 0.0;
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t j = 0; j < d; ++j)
        worst = std::max(worst,
                         std::abs(a.state.assignments(c, j) - b.state.assignments(perm[c], perm[j])));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("multi-step run stops on convergence or the iteration cap") {
  const IBProblem p = random_problem(13, 4, 6, 0.5);
  const IBRun run = ib_run(p, initial_state(p), LatentKind::categorical);
  CHECK(run.iterations >= 1);
  CHECK(run.iterations <= 100);
  if (run.converged) CHECK(run.last_change < 1e-8);
  const IBRun capped = ib_run(p, initial_state(p), LatentKind::categorical, 0.0, 2, 0.0);
  CHECK(capped.iterations == 2);
  CHECK_FALSE(capped.converged);
}

TEST_CASE("latent kind names") {
  CHECK(parse_latent_kind("softmax") == LatentKind::categorical);
  CHECK(parse_latent_kind("bernoulli") == LatentKind::bernoulli);
  CHECK_THROWS_AS(parse_latent_kind("tanh"), ValueError);
}

TEST_CASE("duplicated channels get identical assignment columns") {
  IBProblem p = random_problem(14, 4, 6);
  for (std::size_t i = 0; i < 4; ++i) p.channels(i, 1) = p.channels(i, 0);
  const IBState next = ib_iterate_categorical(p, initial_state(p));
  for (std::size_t c = 0; c < 6; ++c) CHECK(next.assignments(c, 0) == next.assignments(c, 1));
}

TEST_CASE("very negative off energy switches every association on") {
  const IBProblem p = random_problem(15, 4, 6);
  IBState s = initial_state(p);
  normalize_centers(s);
  const IBState next = ib_iterate_bernoulli(p, s, -1e6);
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t j = 0; j < 6; ++j) CHECK(next.assignments(c, j) == s.priors[c]);
}

TEST_CASE("flat attention at vanishing beta averages the channels") {
  const IBProblem p = random_problem(16, 4, 6);
  const IBState s = initial_state(p);
  const Matrix z = attention_equivalent(p.channels, s, 1e-300, LatentKind::categorical);
  for (std::size_t i = 0; i < 4; ++i) {
    double avg = 0.0;
    for (std::size_t j = 0; j < 6; ++j) avg += p.channels(i, j) / 6.0;
    for (std::size_t c = 0; c < 6; ++c) CHECK(z(i, c) == doctest::Approx(avg).epsilon(1e-13));
  }
}

TEST_CASE("scalar instance") {
  IBProblem p;
  p.channels = Matrix::scalar(2.0);
  p.beta = 1.5;
  IBState s = initial_state(p);
  s.covariance = SharedCovariance(Matrix::scalar(1.0));
  for (LatentKind kind : {LatentKind::categorical, LatentKind::bernoulli}) {
    CHECK(attention_equivalent(p.channels, s, p.beta, kind, 0.3).item() == doctest::Approx(2.0));
    CHECK(ib_iterate(p, s, kind, 0.3).centers.item() == doctest::Approx(2.0));
  }
}
