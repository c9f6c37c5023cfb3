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

#include "ibkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "ibkit/errors.hpp"

namespace ibkit {

namespace {

std::string shape_of(const Matrix& m) { return m.shape_string(); }

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " +
                         shape_of(b));
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match " + shape_string());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::randn(std::size_t rows, std::size_t cols, CounterRng& rng, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.data_) v = stddev * rng.normal();
  return m;
}

double Matrix::item() const {
  if (rows_ != 1 || cols_ != 1) throw DimensionError("item() on " + shape_string());
  return data_[0];
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Matrix& m, std::string_view stage) {
  if (!m.all_finite()) {
    throw NumericError("non-finite value produced at stage '" + std::string(stage) + "'");
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_of(a) + " x " + shape_of(b));
  }
  const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
  Matrix c(n, m);
  // k is unrolled by four; each c(i, j) still accumulates in k order.
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c.row(i).data();
    const double* arow = a.row(i).data();
    std::size_t k = 0;
    for (; k + 4 <= k_dim; k += 4) {
      const double a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
      const double* b0 = b.row(k).data();
      const double* b1 = b0 + m;
      const double* b2 = b1 + m;
      const double* b3 = b2 + m;
      for (std::size_t j = 0; j < m; ++j)
        crow[j] = (((crow[j] + a0 * b0[j]) + a1 * b1[j]) + a2 * b2[j]) + a3 * b3[j];
    }
    for (; k < k_dim; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_of(a) + "^T x " + shape_of(b));
  }
  const std::size_t k_dim = a.rows(), n = a.cols(), m = b.cols();
  Matrix c(n, m);
  std::size_t k = 0;
  for (; k + 4 <= k_dim; k += 4) {
    const double* a0 = a.row(k).data();
    const double* a1 = a0 + n;
    const double* a2 = a1 + n;
    const double* a3 = a2 + n;
    const double* b0 = b.row(k).data();
    const double* b1 = b0 + m;
    const double* b2 = b1 + m;
    const double* b3 = b2 + m;
    for (std::size_t i = 0; i < n; ++i) {
      const double x0 = a0[i], x1 = a1[i], x2 = a2[i], x3 = a3[i];
      double* crow = c.row(i).data();
      for (std::size_t j = 0; j < m; ++j)
        crow[j] = (((crow[j] + x0 * b0[j]) + x1 * b1[j]) + x2 * b2[j]) + x3 * b3[j];
    }
  }
  for (; k < k_dim; ++k) {
    const double* arow = a.row(k).data();
    const double* brow = b.row(k).data();
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = arow[i];
      double* crow = c.row(i).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_of(a) + " x " + shape_of(b) + "^T");
  }
  // Same accumulation order as a dot product over k, but vectorises over j.
  return matmul(a, transpose(b));
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] *= bd[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& v : c.data()) v *= s;
  return c;
}

void axpy(Matrix& a, double s, const Matrix& b) {
  require_same_shape(a, b, "axpy");
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += s * bd[i];
}

double dot(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += ad[i] * bd[i];
  return s;
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double mean(const Matrix& a) {
  if (a.empty()) throw DimensionError("mean of empty matrix");
  return sum(a) / static_cast<double>(a.size());
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) m = std::max(m, std::abs(ad[i] - bd[i]));
  return m;
}

double frobenius(const Matrix& a) { return std::sqrt(dot(a, a)); }

Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_of(a));
  }
  Matrix out(a.rows(), end - begin);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto src = a.row(i);
    std::copy(src.begin() + begin, src.begin() + end, out.row(i).begin());
  }
  return out;
}

void assign_cols(Matrix& dst, std::size_t begin, const Matrix& block) {
  if (block.rows() != dst.rows() || begin + block.cols() > dst.cols()) {
    throw DimensionError("assign_cols: block " + shape_of(block) + " at column " +
                         std::to_string(begin) + " into " + shape_of(dst));
  }
  for (std::size_t i = 0; i < dst.rows(); ++i) {
    auto src = block.row(i);
    std::copy(src.begin(), src.end(), dst.row(i).begin() + begin);
  }
}

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix gelu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.data()) v = gelu(v);
  return y;
}

Matrix gelu_backward(const Matrix& x, const Matrix& upstream) {
  require_same_shape(x, upstream, "gelu_backward");
  Matrix g(x.rows(), x.cols());
  auto xd = x.data();
  auto ud = upstream.data();
  auto gd = g.data();
  for (std::size_t i = 0; i < xd.size(); ++i) gd[i] = gelu_grad(xd[i]) * ud[i];
  return g;
}

Matrix activate(Activation kind, const Matrix& x) {
  Matrix y = x;
  switch (kind) {
    case Activation::sigmoid:
      for (double& v : y.data()) v = sigmoid(v);
      break;
    case Activation::tanh:
      for (double& v : y.data()) v = std::tanh(v);
      break;
    case Activation::softmax_rows:
      for (std::size_t i = 0; i < y.rows(); ++i) {
        auto r = y.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double total = 0.0;
        for (double& v : r) {
          v = std::exp(v - mx);
          total += v;
        }
        for (double& v : r) v /= total;
      }
      break;
  }
  return y;
}

std::vector<double> layer_norm(std::span<const double> row, std::span<const double> gamma,
                               std::span<const double> beta, double eps) {
  const std::size_t d = row.size();
  if (d == 0 || gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: row/gamma/beta lengths " + std::to_string(d) + "/" +
                         std::to_string(gamma.size()) + "/" + std::to_string(beta.size()));
  }
  double mu = 0.0;
  for (double v : row) mu += v;
  mu /= static_cast<double>(d);
  double var = 0.0;
  for (double v : row) var += (v - mu) * (v - mu);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + eps);
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = gamma[i] * ((row[i] - mu) * inv) + beta[i];
  return out;
}

Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                       LayerNormCache* cache) {
  const std::size_t d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || !gamma.same_shape(beta)) {
    throw DimensionError("layer_norm_rows: x " + shape_of(x) + ", gamma " + shape_of(gamma) +
                         ", beta " + shape_of(beta));
  }
  Matrix out(x.rows(), d);
  Matrix normalized(x.rows(), d);
  std::vector<double> inv_std(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = x.row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (r[j] - mu) * inv;
      normalized(i, j) = xh;
      out(i, j) = gamma(0, j) * xh + beta(0, j);
    }
  }
  if (cache != nullptr) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

LayerNormGrads layer_norm_rows_backward(const Matrix& upstream, const Matrix& gamma,
                                        const LayerNormCache& cache) {
  require_same_shape(upstream, cache.normalized, "layer_norm_rows_backward");
  const std::size_t n = upstream.rows(), d = upstream.cols();
  LayerNormGrads g{Matrix(n, d), Matrix(1, d), Matrix(1, d)};
  std::vector<double> dxh(d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double up = upstream(i, j);
      const double xh = cache.normalized(i, j);
      g.dgamma(0, j) += up * xh;
      g.dbeta(0, j) += up;
      dxh[j] = up * gamma(0, j);
      mean_dxh += dxh[j];
      mean_dxh_xh += dxh[j] * xh;
    }
    mean_dxh /= static_cast<double>(d);
    mean_dxh_xh /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      g.dx(i, j) =
          cache.inv_std[i] * (dxh[j] - mean_dxh - cache.normalized(i, j) * mean_dxh_xh);
    }
  }
  return g;
}

ParamSlot::ParamSlot(std::string name, Matrix value)
    : name_(std::move(name)), value_(std::move(value)), grad_(value_.rows(), value_.cols()) {}

void ParamSlot::accumulate(const Matrix& g) {
  if (!g.same_shape(grad_)) {
    throw DimensionError("ParamSlot '" + name_ + "': gradient " + shape_of(g) + " vs value " +
                         shape_of(value_));
  }
  axpy(grad_, 1.0, g);
}

void ParamSlot::accumulate_scalar(double g) {
  if (grad_.size() != 1) throw DimensionError("ParamSlot '" + name_ + "' is not a scalar");
  grad_.data()[0] += g;
}

void ParamSlot::zero_grad() { std::fill(grad_.data().begin(), grad_.data().end(), 0.0); }

void ParamSlot::assign(Matrix value) {
  if (!value.same_shape(value_)) {
    throw DimensionError("ParamSlot '" + name_ + "': cannot assign " + shape_of(value) +
                         " to " + shape_of(value_));
  }
  value_ = std::move(value);
}

void require_unique_names(std::span<ParamSlot* const> slots) {
  std::unordered_set<std::string> seen;
  for (const ParamSlot* s : slots) {
    if (!seen.insert(s->name()).second) throw ValueError("duplicate parameter name '" + s->name() + "'");
  }
}

double GradcheckReport::worst() const noexcept {
  double w = 0.0;
  for (const auto& s : slots) w = std::max(w, s.rel_error);
  return w;
}

GradcheckReport finite_diff_gradcheck(std::span<ParamSlot* const> slots,
                                      const std::function<double()>& loss, double h) {
  if (!(h > 0.0)) throw ValueError("gradcheck: step h must be positive");
  GradcheckReport report;
  for (ParamSlot* slot : slots) {
    auto values = slot->value().data();
    auto analytic = slot->grad().data();
    double max_diff = 0.0, max_fd = 0.0;
    std::size_t worst_index = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double f_plus = loss();
      values[i] = saved - h;
      const double f_minus = loss();
      values[i] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericError("gradcheck: non-finite loss while perturbing '" + slot->name() +
                           "' entry " + std::to_string(i));
      }
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double diff = std::abs(analytic[i] - fd);
      if (diff > max_diff) {
        max_diff = diff;
        worst_index = i;
      }
      max_fd = std::max(max_fd, std::abs(fd));
    }
    report.slots.push_back({slot->name(), max_diff / std::max(1.0, max_fd), max_fd, worst_index});
  }
  return report;
}

}  // namespace ibkit
