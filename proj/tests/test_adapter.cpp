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
#include <filesystem>

#include "doctest.h"
#include "ibkit/adapter.hpp"
#include "ibkit/errors.hpp"
#include "ibkit/scenarios.hpp"

using namespace ibkit;

namespace {

// Straight-line IB-Adapter: scalar loops only, no library matmul/layer_norm.
Matrix reference_ib_forward(const Matrix& x, const IBAdapterParams& p) {
  const std::size_t n = x.rows(), d = p.head_dim();
  Matrix z(n, x.cols());
  for (std::size_t h = 0; h < p.head_count(); ++h) {
    const IBHead& hp = p.heads[h];
    const std::size_t off = h * d;
    const Matrix& wq = hp.w_q.value();
    const Matrix& w1 = hp.w_v1.value();
    const Matrix& w2 = hp.w_v2.value();
    // gate[i][j] = sigmoid(tau * sum_t q[t][i] x[t][j] - b)
    std::vector<double> gate(d * d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double g = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
          double q = 0.0;
          for (std::size_t k = 0; k < d; ++k) q += x(t, off + k) * wq(k, i);
          g += q * x(t, off + j);
        }
        const double s = hp.tau.value().item() * g - hp.bias.value().item();
        gate[i * d + j] = 1.0 / (1.0 + std::exp(-s));
      }
    }
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<double> hid(d), pre(d);
      for (std::size_t j = 0; j < d; ++j) {
        double a = 0.0;
        for (std::size_t k = 0; k < d; ++k) a += x(t, off + k) * w1(k, j);
        hid[j] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
      }
      for (std::size_t j = 0; j < d; ++j) {
        double a = 0.0;
        for (std::size_t k = 0; k < d; ++k) a += hid[k] * w2(k, j);
        pre[j] = a;
      }
      double mu = 0.0, var = 0.0;
      for (double v : pre) mu += v / d;
      for (double v : pre) var += (v - mu) * (v - mu) / d;
      std::vector<double> val(d);
      for (std::size_t j = 0; j < d; ++j) {
        val[j] = hp.norm_gamma.value()(0, j) * (pre[j] - mu) / std::sqrt(var + 1e-5) +
                 hp.norm_beta.value()(0, j);
      }
      for (std::size_t j = 0; j < d; ++j) {
        double a = 0.0;
        for (std::size_t i = 0; i < d; ++i) a += val[i] * gate[i * d + j];
        z(t, off + j) = a;
      }
    }
  }
  return z;
}

AdapterConfig small_config(std::size_t dim = 16, std::size_t heads = 4) {
  AdapterConfig c;
  c.dim = dim;
  c.heads = heads;
  c.hidden = 4 * dim;
  return c;
}

}  // namespace

TEST_CASE("partition_heads / merge_heads") {
  const Matrix x = Matrix::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}});
  auto parts = partition_heads(x, 2);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0] == Matrix::from_rows({{1, 2}, {5, 6}}));
  CHECK(parts[1] == Matrix::from_rows({{3, 4}, {7, 8}}));

  auto single = partition_heads(x, 1);
  CHECK(single.size() == 1);
  CHECK(single[0] == x);

  CounterRng rng(1);
  const Matrix r = Matrix::randn(8, 32, rng);
  CHECK(merge_heads(partition_heads(r, 4)) == r);
  CHECK_THROWS_AS(partition_heads(r, 5), DimensionError);
}

TEST_CASE("covariance_gram") {
  CHECK(covariance_gram(Matrix::identity(2), Matrix::identity(2)) == Matrix::identity(2));
  CHECK(covariance_gram(Matrix::from_rows({{1}, {1}}), Matrix::scalar(2.0)).item() == 4.0);

  // Channel-pair dot products, one pair at a time.
  CounterRng rng(3);
  const Matrix x = Matrix::randn(64, 8, rng);
  const Matrix wq = Matrix::randn(8, 8, rng);
  const Matrix g = covariance_gram(x, wq);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      double expect = 0.0;
      for (std::size_t t = 0; t < 64; ++t) {
        double q = 0.0;
        for (std::size_t k = 0; k < 8; ++k) q += x(t, k) * wq(k, i);
        expect += q * x(t, j);
      }
      CHECK(std::abs(g(i, j) - expect) < 1e-12 * std::max(1.0, std::abs(expect)));
    }
  }
  CHECK_THROWS_AS(covariance_gram(x, Matrix(7, 7)), DimensionError);
}

TEST_CASE("sigmoid_gate") {
  const Matrix half = sigmoid_gate(Matrix(3, 3), 1.0, 0.0);
  for (double v : half.data()) CHECK(v == 0.5);

  const Matrix a = sigmoid_gate(Matrix::identity(2), 1.0, 0.0);
  CHECK(a(0, 0) == doctest::Approx(0.731058578630005).epsilon(1e-14));
  CHECK(a(1, 1) == doctest::Approx(0.731058578630005).epsilon(1e-14));
  CHECK(a(0, 1) == 0.5);

  CounterRng rng(4);
  const Matrix g = Matrix::randn(4, 4, rng, 3.0);
  const Matrix shut = sigmoid_gate(g, 1.0, 800.0);
  for (double v : shut.data()) CHECK(v < 1e-300);
}

TEST_CASE("gate entries lie in (0,1), are monotone, and are not symmetrised") {
  CounterRng rng(8);
  AdapterConfig cfg = small_config(16, 4);
  cfg.init_std = 0.5;
  for (int trial = 0; trial < 10; ++trial) {
    FusedParams params(cfg, rng);
    const Matrix x = Matrix::randn(8, 16, rng);
    IBTape tape;
    (void)ib_adapter_forward(x, params.ib, &tape);
    bool asymmetric = false;
    for (const auto& head : tape.heads) {
      for (double v : head.gate.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
      for (std::size_t i = 0; i < head.gate.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j)
          if (std::abs(head.gate(i, j) - head.gate(j, i)) > 1e-6) asymmetric = true;
    }
    CHECK(asymmetric);
  }

  const Matrix g = Matrix::randn(5, 5, rng);
  const Matrix base = sigmoid_gate(g, 0.7, 0.3);
  for (std::size_t e = 0; e < g.size(); ++e) {
    Matrix bumped = g;
    bumped.data()[e] += rng.uniform(0.0, 2.0);
    const Matrix a = sigmoid_gate(bumped, 0.7, 0.3);
    CHECK(a.data()[e] >= base.data()[e]);
  }
}

TEST_CASE("value_transform") {
  const Matrix beta = Matrix::from_rows({{0.1, -0.2, 0.3}});
  const Matrix v = value_transform(Matrix(4, 3), Matrix::identity(3), Matrix::identity(3),
                                   Matrix(1, 3, 1.0), beta);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 3; ++j) CHECK(v(t, j) == beta(0, j));

  // Composition of the kernel oracles on row [1, -1].
  const Matrix out = value_transform(Matrix::from_rows({{1, -1}}), Matrix::identity(2),
                                     Matrix::identity(2), Matrix(1, 2, 1.0), Matrix(1, 2, 0.0));
  const auto expect = layer_norm(std::vector<double>{gelu(1.0), gelu(-1.0)},
                                 std::vector<double>{1, 1}, std::vector<double>{0, 0});
  CHECK(out(0, 0) == expect[0]);
  CHECK(out(0, 1) == expect[1]);
}

TEST_CASE("value_transform gradient of mean(V) w.r.t. W_v1 matches finite differences") {
  CounterRng rng(5);
  const Matrix x = Matrix::randn(4, 4, rng);
  ParamSlot w1("w_v1", Matrix::randn(4, 4, rng));
  const Matrix w2 = Matrix::randn(4, 4, rng);
  const Matrix gamma = Matrix::randn(1, 4, rng);
  const Matrix beta = Matrix::randn(1, 4, rng);
  ValueTape tape;
  const Matrix v = value_transform(x, w1.value(), w2, gamma, beta, &tape);
  const Matrix up(v.rows(), v.cols(), 1.0 / v.size());
  w1.accumulate(value_transform_backward(up, tape, w1.value(), w2, gamma).dw_v1);
  std::vector<ParamSlot*> slots{&w1};
  auto rep = finite_diff_gradcheck(slots, [&] {
    return mean(value_transform(x, w1.value(), w2, gamma, beta));
  });
  CHECK(rep.worst() < 1e-5);
}

TEST_CASE("ib_adapter_forward matches the straight-line reference") {
  CounterRng rng(0);
  AdapterConfig cfg = small_config(16, 4);
  cfg.init_std = 0.3;
  FusedParams params(cfg, rng);
  const Matrix x = Matrix::randn(8, 16, rng);
  const Matrix z = ib_adapter_forward(x, params.ib);
  CHECK(max_abs_diff(z, reference_ib_forward(x, params.ib)) < 1e-12);
}

TEST_CASE("ib_adapter_forward closed forms") {
  SUBCASE("identity gate gives Z = V") {
    CounterRng rng(2);
    const std::size_t d = 4;
    IBAdapterParams p(d, 1, rng, 1000.0, 500.0, 0.5);
    p.heads[0].w_q.assign(Matrix::identity(d));
    const Matrix x = Matrix::identity(d);
    IBTape tape;
    const Matrix z = ib_adapter_forward(x, p, &tape);
    CHECK(z == tape.heads[0].value);
  }
  SUBCASE("zero input") {
    CounterRng rng(6);
    IBAdapterParams p(6, 2, rng, -1.0, 1.0, 0.02);
    for (auto& h : p.heads) h.norm_beta.assign(Matrix::randn(1, 3, rng));
    const Matrix z = ib_adapter_forward(Matrix(5, 6), p);
    const double a = 1.0 / (1.0 + std::exp(1.0));  // sigmoid(-b), b = 1
    for (std::size_t h = 0; h < 2; ++h) {
      const Matrix& beta = p.heads[h].norm_beta.value();
      const double col = a * (beta(0, 0) + beta(0, 1) + beta(0, 2));
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(z(t, 3 * h + j) - col) < 1e-15);
    }
  }
}

TEST_CASE("non-finite intermediates are reported by stage") {
  CounterRng rng(1);
  IBAdapterParams p(4, 1, rng, -1.0, 1.0, 0.02);
  Matrix x(2, 4, 1e300);
  p.heads[0].w_q.assign(Matrix(4, 4, 1e300));
  try {
    (void)ib_adapter_forward(x, p);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("gram") != std::string::npos);
  }
}

TEST_CASE("construction validates shapes and p_drop") {
  CounterRng rng(0);
  AdapterConfig cfg = small_config(10, 4);
  CHECK_THROWS_AS(FusedParams(cfg, rng), DimensionError);
  cfg = small_config();
  cfg.p_drop = 1.5;
  CHECK_THROWS_AS(FusedParams(cfg, rng), ValueError);
  cfg.p_drop = -0.1;
  CHECK_THROWS_AS(FusedParams(cfg, rng), ValueError);

  cfg = small_config();
  FusedParams p(cfg, rng);
  CHECK(p.hidden() == 64);
  CHECK(p.lambda.value().item() == 0.3);
  CHECK(p.ib.heads[0].tau.value().item() == doctest::Approx(0.5));
  CHECK(p.ib.heads[0].bias.value().item() == 1.0);
  auto slots = p.slots();
  CHECK_NOTHROW(require_unique_names(slots));
  CHECK(slots.size() == 4 * 7 + 3);
}

TEST_CASE("fusion identities") {
  CounterRng rng(0);
  FusedParams p(small_config(), rng);
  const Matrix x = Matrix::randn(8, 16, rng);

  p.lambda.assign(Matrix::scalar(0.0));
  CounterRng r1(1);
  CHECK(fused_forward(x, p, Mode::infer, r1) == mlp_forward(x, p));

  p.lambda.assign(Matrix::scalar(0.3));
  p.set_p_drop(1.0);
  CounterRng r2(1);
  CHECK(fused_forward(x, p, Mode::train, r2) ==
        scale(ib_adapter_forward(x, p.ib), std::tanh(0.3)));

  // Inference ignores p_drop and is deterministic.
  CounterRng r3(5), r4(77);
  const Matrix a = fused_forward(x, p, Mode::infer, r3);
  const Matrix b = fused_forward(x, p, Mode::infer, r4);
  CHECK(a == b);
  CHECK(a == add(mlp_forward(x, p), scale(ib_adapter_forward(x, p.ib), std::tanh(0.3))));
}

TEST_CASE("stochastic pathway dropout frequency and reproducibility") {
  CounterRng init(0);
  AdapterConfig cfg = small_config(8, 2);
  FusedParams p(cfg, init);
  p.set_p_drop(0.3);
  const Matrix x = Matrix::randn(2, 8, init);
  CounterRng a(0), b(0);
  int drops = 0;
  for (int i = 0; i < 10000; ++i) {
    FusedTape ta, tb;
    (void)fused_forward(x, p, Mode::train, a, &ta);
    (void)fused_forward(x, p, Mode::train, b, &tb);
    CHECK(ta.mlp_dropped == tb.mlp_dropped);
    drops += ta.mlp_dropped ? 1 : 0;
  }
  const double freq = drops / 10000.0;
  CHECK(freq >= 0.28);
  CHECK(freq <= 0.32);
}

TEST_CASE("fused_backward state and linearity") {
  CounterRng rng(0);
  FusedParams p(small_config(), rng);
  FusedTape empty;
  CHECK_THROWS_AS(fused_backward(Matrix(8, 16), empty, p), StateError);

  const Matrix x = Matrix::randn(8, 16, rng);
  FusedTape tape;
  (void)fused_forward(x, p, Mode::infer, rng, &tape);
  p.zero_grad();
  const Matrix dx = fused_backward(Matrix(8, 16), tape, p);
  CHECK(max_abs(dx) == 0.0);
  for (ParamSlot* s : p.slots()) CHECK(max_abs(s->grad()) == 0.0);
}

TEST_CASE("dropped MLP pathway receives zero gradient") {
  auto s = scenarios::make_fused_setup(3, 8, 16, 4, 64, 0.3);
  s.params.set_p_drop(1.0);
  s.mode = Mode::train;
  s.compute_gradients();
  CHECK(max_abs(s.params.mlp_w1.grad()) == 0.0);
  CHECK(max_abs(s.params.mlp_w2.grad()) == 0.0);
  CHECK(max_abs(s.params.ib.heads[0].w_q.grad()) > 0.0);
}

TEST_CASE("lambda gradient equals (1 - tanh^2) <upstream, IB(X)>") {
  CounterRng rng(12);
  FusedParams p(small_config(), rng);
  p.lambda.assign(Matrix::scalar(0.8));
  ParamSlot x("x", Matrix::randn(8, 16, rng));
  const Matrix up = Matrix::randn(8, 16, rng);
  FusedTape tape;
  (void)fused_forward(x.value(), p, Mode::infer, rng, &tape);
  p.zero_grad();
  (void)fused_backward(up, tape, p);
  const double th = std::tanh(0.8);
  const double closed = (1 - th * th) * dot(up, ib_adapter_forward(x.value(), p.ib));
  CHECK(p.lambda.grad().item() == doctest::Approx(closed).epsilon(1e-12));

  std::vector<ParamSlot*> slots{&p.lambda};
  auto rep = finite_diff_gradcheck(slots, [&] {
    CounterRng r(0);
    return dot(up, fused_forward(x.value(), p, Mode::infer, r));
  });
  CHECK(rep.worst() < 1e-5);
}

TEST_CASE("full gradient check, default initialisation, seeds 0-4") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = scenarios::make_fused_setup(seed, 8, 16, 4, 64);
    s.compute_gradients();
    auto slots = s.slots();
    auto rep = finite_diff_gradcheck(slots, [&] { return s.loss(); }, 1e-5);
    CHECK(rep.passed(1e-4));
  }
}

TEST_CASE("gradient check with large weights in every mode and kind") {
  // Larger weights make every nonlinearity matter; the upstream is random
  // so that no gradient is trivially tiny.
  for (ProjectorKind kind : {ProjectorKind::mlp, ProjectorKind::ib, ProjectorKind::fused}) {
    for (double p_drop : {0.0, 1.0}) {
      AdapterConfig cfg = small_config(12, 3);
      cfg.init_std = 0.4;
      cfg.kind = kind;
      cfg.p_drop = p_drop;
      CounterRng rng(21);
      FusedParams params(cfg, rng);
      for (auto& h : params.ib.heads) {
        h.norm_gamma.assign(Matrix::randn(1, 4, rng));
        h.norm_beta.assign(Matrix::randn(1, 4, rng));
      }
      ParamSlot x("input", Matrix::randn(6, 12, rng));
      const Matrix up = Matrix::randn(6, 12, rng);
      auto loss = [&] {
        CounterRng r(4);
        return dot(up, fused_forward(x.value(), params, Mode::train, r));
      };
      params.zero_grad();
      x.zero_grad();
      CounterRng r(4);
      FusedTape tape;
      (void)fused_forward(x.value(), params, Mode::train, r, &tape);
      x.accumulate(fused_backward(up, tape, params));
      auto slots = params.slots();
      slots.push_back(&x);
      auto rep = finite_diff_gradcheck(slots, loss, 1e-6);
      INFO("kind " << to_string(kind) << " p_drop " << p_drop);
      for (const auto& sc : rep.slots) {
        INFO(sc.name << " " << sc.rel_error);
        CHECK(sc.rel_error < 1e-6);
      }
    }
  }
}

TEST_CASE("noise channel couples more weakly than semantic channels") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto c = scenarios::gate_coupling_trial(seed);
    if (c.noise_mean < c.semantic_mean) ++wins;
  }
  CHECK(wins >= 45);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  CounterRng rng(9);
  FusedParams p(small_config(), rng);
  const auto dir = std::filesystem::temp_directory_path() / "ibkit_test_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, p.slots(), {{"kind", "fused"}});
  auto ckpt = load_checkpoint(dir);
  CHECK(ckpt.metadata.at("kind") == "fused");

  CounterRng other(10);
  FusedParams q(small_config(), other);
  restore_slots(ckpt, q.slots());
  auto ps = p.slots();
  auto qs = q.slots();
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps[i]->value() == qs[i]->value());

  // Manifest offsets address the IBMAT blocks directly.
  const auto& entry = ckpt.tensors.begin()->second;
  CHECK(entry.size() > 0);
  std::filesystem::remove_all(dir);
}
