#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace delta {

/// Dense row-major matrix of doubles.
///
/// Zero-row matrices are allowed so that an empty replay draw can flow
/// through the same code paths as a populated one.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double v);
  std::string shape_string() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materializing the transpose.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
/// a·bᵀ without materializing the transpose.
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

/// Adds `bias` (length cols) to every row in place.
void add_row_vector(Matrix& m, std::span<const double> bias);
/// Accumulates column sums of `m` into `out` (length cols).
void accumulate_column_sums(const Matrix& m, std::span<double> out);
void add_in_place(Matrix& target, const Matrix& addend);

Matrix relu(const Matrix& m);
/// Gradient of relu given the pre-activation input.
Matrix relu_backward(const Matrix& pre_activation, const Matrix& grad_output);

inline constexpr double kNormEpsilon = 1e-12;

/// Divides each row by max(‖row‖₂, epsilon).
Matrix l2_normalize_rows(const Matrix& m, double epsilon = kNormEpsilon);
/// Vector-Jacobian product of l2_normalize_rows at `input`.
Matrix l2_normalize_rows_backward(const Matrix& input, const Matrix& grad_output,
                                  double epsilon = kNormEpsilon);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& m);

/// Concatenates matrices with equal column counts vertically.
Matrix vstack(std::span<const Matrix> parts);

bool all_finite(const Matrix& m);
double frobenius_norm(const Matrix& m);
double max_abs_difference(const Matrix& a, const Matrix& b);

/// 64-bit FNV-1a over the raw bytes of the values. Equal hashes for
/// bit-identical matrices.
std::uint64_t content_hash(const Matrix& m, std::uint64_t seed = 0xcbf29ce484222325ULL);

struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix gradient;
  bool trainable = true;

  ParamTensor() = default;
  ParamTensor(std::string name, Matrix init);

  void zero_grad() { gradient.fill(0.0); }
};

struct SgdConfig {
  double learning_rate = 0.1;
  double weight_decay = 1e-4;

  void validate() const;
};

/// value ← value − lr·(gradient + weight_decay·value) for trainable tensors,
/// then clears their gradients. Frozen tensors are not touched.
void sgd_step(std::span<ParamTensor* const> params, const SgdConfig& cfg);

/// Central differences (f(x+h) − f(x−h)) / 2h for every entry of `p.value`.
/// `p` is perturbed in place and restored bit-exactly before returning.
Matrix finite_difference_gradient(const std::function<double(const ParamTensor&)>& loss_fn,
                                  ParamTensor& p, double h = 1e-5);

/// max over entries of |a − b| / max(|a|, |b|, floor).
double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-6);

}  // namespace delta
