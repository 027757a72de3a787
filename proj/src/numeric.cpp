#include "delta/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <cblas.h>

#include "delta/error.hpp"

namespace delta {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    std::ostringstream msg;
    msg << "matrix data length " << data_.size() << " does not match shape (" << rows << "x"
        << cols << ")";
    throw DimensionError(msg.str());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged initializer for matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

namespace {

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                         b.shape_string());
  }
}

}  // namespace

namespace {

// C = op(A)·op(B) for row-major operands via BLAS.
Matrix gemm(const Matrix& a, bool trans_a, const Matrix& b, bool trans_b) {
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t k = trans_a ? a.rows() : a.cols();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  Matrix out(m, n);
  if (m == 0 || n == 0 || k == 0) return out;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
              static_cast<blasint>(n), static_cast<blasint>(k), 1.0, a.values().data(),
              static_cast<blasint>(std::max<std::size_t>(1, a.cols())), b.values().data(),
              static_cast<blasint>(std::max<std::size_t>(1, b.cols())), 0.0, out.values().data(),
              static_cast<blasint>(n));
  return out;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  return gemm(a, false, b, false);
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows(), "matmul_at_b", a, b);
  return gemm(a, true, b, false);
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.cols(), "matmul_a_bt", a, b);
  return gemm(a, false, b, true);
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

void add_row_vector(Matrix& m, std::span<const double> bias) {
  if (bias.size() != m.cols()) {
    throw DimensionError("add_row_vector: bias length " + std::to_string(bias.size()) +
                         " vs matrix " + m.shape_string());
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
}

void accumulate_column_sums(const Matrix& m, std::span<double> out) {
  if (out.size() != m.cols()) {
    throw DimensionError("accumulate_column_sums: output length " + std::to_string(out.size()) +
                         " vs matrix " + m.shape_string());
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
}

void add_in_place(Matrix& target, const Matrix& addend) {
  require_shape(target.rows() == addend.rows() && target.cols() == addend.cols(), "add_in_place",
                target, addend);
  auto t = target.values();
  auto a = addend.values();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += a[i];
}

Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Matrix relu_backward(const Matrix& pre_activation, const Matrix& grad_output) {
  require_shape(pre_activation.rows() == grad_output.rows() &&
                    pre_activation.cols() == grad_output.cols(),
                "relu_backward", pre_activation, grad_output);
  Matrix out = grad_output;
  auto x = pre_activation.values();
  auto g = out.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (x[i] <= 0.0) g[i] = 0.0;
  return out;
}

Matrix l2_normalize_rows(const Matrix& m, double epsilon) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double sq = 0.0;
    for (double v : r) sq += v * v;
    const double denom = std::max(std::sqrt(sq), epsilon);
    for (double& v : r) v /= denom;
  }
  return out;
}

Matrix l2_normalize_rows_backward(const Matrix& input, const Matrix& grad_output,
                                  double epsilon) {
  require_shape(input.rows() == grad_output.rows() && input.cols() == grad_output.cols(),
                "l2_normalize_rows_backward", input, grad_output);
  Matrix out(input.rows(), input.cols());
  for (std::size_t i = 0; i < input.rows(); ++i) {
    auto x = input.row(i);
    auto g = grad_output.row(i);
    auto o = out.row(i);
    double sq = 0.0;
    for (double v : x) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm <= epsilon) {
      // Constant denominator below the guard.
      for (std::size_t j = 0; j < o.size(); ++j) o[j] = g[j] / epsilon;
      continue;
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) dot += x[j] * g[j];
    const double inv = 1.0 / norm;
    const double coef = dot * inv * inv * inv;
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = g[j] * inv - x[j] * coef;
  }
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    if (r.empty()) continue;
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
  return out;
}

Matrix vstack(std::span<const Matrix> parts) {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool have_cols = false;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    if (have_cols && p.cols() != cols) {
      throw DimensionError("vstack: column mismatch " + std::to_string(cols) + " vs " +
                           p.shape_string());
    }
    cols = p.cols();
    have_cols = true;
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return Matrix(rows, cols, std::move(data));
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

double frobenius_norm(const Matrix& m) {
  double sq = 0.0;
  for (double v : m.values()) sq += v * v;
  return std::sqrt(sq);
}

double max_abs_difference(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_difference", a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  return worst;
}

std::uint64_t content_hash(const Matrix& m, std::uint64_t seed) {
  std::uint64_t h = seed;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t shape[2] = {m.rows(), m.cols()};
  mix(shape, sizeof(shape));
  mix(m.values().data(), m.size() * sizeof(double));
  return h;
}

ParamTensor::ParamTensor(std::string n, Matrix init)
    : name(std::move(n)), value(std::move(init)), gradient(value.rows(), value.cols()) {}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate", "must be a positive finite number");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw ConfigError("weight_decay", "must be non-negative");
}

void sgd_step(std::span<ParamTensor* const> params, const SgdConfig& cfg) {
  for (ParamTensor* p : params) {
    if (!p->trainable) continue;
    auto v = p->value.values();
    auto g = p->gradient.values();
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] -= cfg.learning_rate * (g[i] + cfg.weight_decay * v[i]);
    p->zero_grad();
  }
}

Matrix finite_difference_gradient(const std::function<double(const ParamTensor&)>& loss_fn,
                                  ParamTensor& p, double h) {
  Matrix estimate(p.value.rows(), p.value.cols());
  auto v = p.value.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double original = v[i];
    v[i] = original + h;
    const double up = loss_fn(p);
    v[i] = original - h;
    const double down = loss_fn(p);
    v[i] = original;
    estimate.values()[i] = (up - down) / (2.0 * h);
  }
  return estimate;
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  require_shape(analytic.rows() == numeric.rows() && analytic.cols() == numeric.cols(),
                "max_relative_error", analytic, numeric);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.values()[i];
    const double n = numeric.values()[i];
    const double scale = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / scale);
  }
  return worst;
}

}  // namespace delta
