#pragma once

// Shared helpers for the unit and acceptance suites: seeded generators and
// brute-force reference implementations that deliberately avoid the library
// code paths they are compared against.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "delta/numeric.hpp"
#include "delta/stream.hpp"

namespace delta::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

inline Matrix random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Matrix m = random_matrix(rows, cols, rng);
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    for (double v : m.row(i)) sq += v * v;
    for (double& v : m.row(i)) v /= std::sqrt(sq);
  }
  return m;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes,
                                              std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::vector<std::size_t> out(n);
  for (auto& y : out) y = pick(rng);
  return out;
}

/// Textbook triple loop.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Supervised contrastive loss written as a direct double loop over anchors
/// and positives, evaluating each log-ratio without log-sum-exp tricks.
inline double brute_force_supcon(const Matrix& v, const std::vector<std::size_t>& labels,
                                 double tau) {
  double total = 0.0;
  int anchors = 0;
  for (std::size_t j = 0; j < v.rows(); ++j) {
    double denom = 0.0;
    for (std::size_t k = 0; k < v.rows(); ++k)
      if (k != j) denom += std::exp(dot(v.row(j), v.row(k)) / tau);
    double inner = 0.0;
    int positives = 0;
    for (std::size_t p = 0; p < v.rows(); ++p) {
      if (p == j || labels[p] != labels[j]) continue;
      inner += std::log(std::exp(dot(v.row(j), v.row(p)) / tau) / denom);
      ++positives;
    }
    if (positives == 0) continue;
    total += -inner / positives;
    ++anchors;
  }
  return anchors == 0 ? 0.0 : total / anchors;
}

/// Balanced-softmax cross-entropy evaluated directly from raw counts:
/// −log( n_y e^{o_y} / Σ_{c seen} n_c e^{o_c} ), averaged over rows.
inline double brute_force_equalization(const Matrix& logits, const std::vector<std::size_t>& labels,
                                       const std::vector<double>& class_weights) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double denom = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c)
      if (class_weights[c] > 0.0) denom += class_weights[c] * std::exp(logits(i, c));
    total += -std::log(class_weights[labels[i]] * std::exp(logits(i, labels[i])) / denom);
  }
  return total / static_cast<double>(logits.rows());
}

inline LabeledVector sample(std::size_t label, std::vector<double> features) {
  return LabeledVector{std::move(features), label};
}

}  // namespace delta::testing
