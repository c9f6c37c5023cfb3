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

// Dense double-precision kernels with hand-written gradients. Everything
// above this layer (adapter, oracle, harness) is built from these.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ibkit/random.hpp"

namespace ibkit {

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix scalar(double v) { return Matrix(1, 1, v); }
  /// i.i.d. N(0, stddev^2) entries drawn from `rng`.
  static Matrix randn(std::size_t rows, std::size_t cols, CounterRng& rng, double stddev = 1.0);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  /// Value of a 1x1 matrix.
  double item() const;

  std::string shape_string() const;
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix& a, const Matrix& b) noexcept {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Throws NumericError mentioning `stage` if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view stage);

// ---------------------------------------------------------------------------
// Linear algebra. Loop order is fixed (i, k, j) so results are bit-reproducible.

Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
/// a += s * b
void axpy(Matrix& a, double s, const Matrix& b);
double dot(const Matrix& a, const Matrix& b);
double sum(const Matrix& a);
double mean(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius(const Matrix& a);

/// Columns [begin, end) of `a`.
Matrix slice_cols(const Matrix& a, std::size_t begin, std::size_t end);
/// Writes `block` into columns starting at `begin`.
void assign_cols(Matrix& dst, std::size_t begin, const Matrix& block);

// ---------------------------------------------------------------------------
// Activations.

/// Exact GELU, x * Phi(x), with Phi the standard normal CDF (erf form).
double gelu(double x) noexcept;
/// d/dx gelu = Phi(x) + x * phi(x).
double gelu_grad(double x) noexcept;
double sigmoid(double x) noexcept;

Matrix gelu(const Matrix& x);
/// Elementwise gelu'(x) * upstream.
Matrix gelu_backward(const Matrix& x, const Matrix& upstream);

enum class Activation { sigmoid, softmax_rows, tanh };

/// Elementwise sigmoid/tanh, or row-wise softmax with max subtraction.
Matrix activate(Activation kind, const Matrix& x);

// ---------------------------------------------------------------------------
// Layer normalisation (population variance).

inline constexpr double kLayerNormEps = 1e-5;

std::vector<double> layer_norm(std::span<const double> row, std::span<const double> gamma,
                               std::span<const double> beta, double eps = kLayerNormEps);

/// Per-row statistics kept for the backward pass.
struct LayerNormCache {
  Matrix normalized;                 // x_hat, pre-affine
  std::vector<double> inv_std;       // 1 / sqrt(var + eps) per row
};

/// Row-wise layer norm; gamma and beta are 1 x cols.
Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                       double eps = kLayerNormEps, LayerNormCache* cache = nullptr);

struct LayerNormGrads {
  Matrix dx;
  Matrix dgamma;
  Matrix dbeta;
};

LayerNormGrads layer_norm_rows_backward(const Matrix& upstream, const Matrix& gamma,
                                        const LayerNormCache& cache);

// ---------------------------------------------------------------------------
// Parameters and gradient checking.

/// A learnable quantity paired with its gradient buffer (always the same shape).
class ParamSlot {
 public:
  ParamSlot() = default;
  ParamSlot(std::string name, Matrix value);

  const std::string& name() const noexcept { return name_; }
  const Matrix& value() const noexcept { return value_; }
  Matrix& value() noexcept { return value_; }
  const Matrix& grad() const noexcept { return grad_; }

  /// grad += g
  void accumulate(const Matrix& g);
  void accumulate_scalar(double g);
  void zero_grad();
  /// Replace the value; the new value must have the current shape.
  void assign(Matrix value);

 private:
  std::string name_;
  Matrix value_;
  Matrix grad_;
};

/// Throws ValueError if two slots share a name.
void require_unique_names(std::span<ParamSlot* const> slots);

struct SlotCheck {
  std::string name;
  double rel_error = 0.0;    // ||g_analytic - g_fd||_inf / max(1, ||g_fd||_inf)
  double max_abs_fd = 0.0;
  std::size_t worst_index = 0;
};

struct GradcheckReport {
  std::vector<SlotCheck> slots;

  double worst() const noexcept;
  bool passed(double tolerance) const noexcept { return worst() < tolerance; }
};

/// Compares the gradients already stored in each slot against central
/// differences of `loss`. Values are perturbed in place and restored.
GradcheckReport finite_diff_gradcheck(std::span<ParamSlot* const> slots,
                                      const std::function<double()>& loss, double h = 1e-5);

// ---------------------------------------------------------------------------
// IBMAT binary format: "IBMAT\0\0\0", u64 rows, u64 cols, rows*cols f64, all little-endian.

inline constexpr std::size_t kMatrixHeaderBytes = 24;

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);
/// Encoded size of `m` in bytes.
std::size_t encoded_size(const Matrix& m) noexcept;

}  // namespace ibkit
