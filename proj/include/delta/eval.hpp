#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "delta/model.hpp"
#include "delta/stream.hpp"

namespace delta {

/// a[i][j]: accuracy on task j's test classes after training tasks 0..i.
/// Only entries with j ≤ i exist. Indices are zero-based.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t tasks = 0);

  std::size_t tasks() const noexcept { return tasks_; }
  void set(std::size_t i, std::size_t j, double accuracy);
  double at(std::size_t i, std::size_t j) const;
  bool filled(std::size_t i, std::size_t j) const;
  bool row_complete(std::size_t i) const;
  /// Number of filled entries in row i.
  std::size_t row_fill(std::size_t i) const;

 private:
  std::size_t index(std::size_t i, std::size_t j) const;

  std::size_t tasks_;
  std::vector<std::optional<double>> entries_;
};

struct ConfusionMatrix {
  /// Class ids labelling rows (true) and columns (predicted), ascending.
  std::vector<std::size_t> classes;
  std::vector<std::vector<std::uint64_t>> counts;

  explicit ConfusionMatrix(std::vector<std::size_t> class_ids = {});

  void add(std::size_t true_class, std::size_t predicted_class);
  std::uint64_t total() const;
  std::uint64_t correct() const;
  double accuracy() const;
  std::vector<std::uint64_t> row_sums() const;
  /// Row-stochastic variant; all-zero rows stay zero.
  std::vector<std::vector<double>> normalized() const;
  std::size_t position(std::size_t class_id) const;
};

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

using Predictor = std::function<std::size_t(const LabeledVector&)>;

/// Argmax over the seen columns of a raw logit row (lowest index wins ties).
std::size_t predict_seen(std::span<const double> logits, const std::vector<bool>& seen_mask);

/// Scores `predictor` on `test`. Throws Error on an empty test set.
EvalResult evaluate(const Predictor& predictor, std::span<const LabeledVector> test,
                    std::span<const std::size_t> seen_classes);

/// Scores the network: argmax of raw logits restricted to `seen_classes`.
EvalResult evaluate(const Network& net, std::span<const LabeledVector> test,
                    std::span<const std::size_t> seen_classes, std::size_t batch_size = 128);

/// A_T = (1/T) Σ_j a[T][j] with T counted from 1.
double average_accuracy(const AccuracyMatrix& mat, std::size_t T);

/// F_T = (1/(T−1)) Σ_{j<T} [max_{i∈[j,T−1]} a[i][j] − a[T][j]], T counted
/// from 1. Throws for T < 2.
double average_forgetting(const AccuracyMatrix& mat, std::size_t T);

struct ClassGroups {
  std::vector<std::size_t> head;
  std::vector<std::size_t> median;
  std::vector<std::size_t> tail;
};

/// Ranks classes by training count (descending, ties by ascending id) and
/// splits them into thirds: head and tail get round(n/3) classes each.
ClassGroups partition_by_frequency(std::span<const std::size_t> classes,
                                   std::span<const std::size_t> train_counts);

struct HeadTailAccuracy {
  ClassGroups groups;
  std::optional<double> head;
  std::optional<double> median;
  std::optional<double> tail;
};

/// Per-group accuracy from a confusion matrix; empty groups report nullopt.
HeadTailAccuracy headtail_breakdown(const ConfusionMatrix& conf,
                                    std::span<const std::size_t> train_counts);

}  // namespace delta
