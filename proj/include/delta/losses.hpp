#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "delta/numeric.hpp"

namespace delta {

struct ContrastiveConfig {
  double temperature = 0.09;

  void validate() const;
};

struct LossResult {
  double value = 0.0;
  /// d(value)/d(input), same shape as the input matrix.
  Matrix gradient;
};

/// Supervised contrastive loss over unit-norm rows `v`.
///
/// For every anchor j with at least one positive (same label, j excluded):
///   L_j = −(1/|P(j)|) Σ_{p∈P(j)} log( exp(v_j·v_p/τ) / Σ_{k≠j} exp(v_j·v_k/τ) )
/// The value is the mean of L_j over anchors with positives. Throws
/// DegenerateBatchError for fewer than two rows.
LossResult supervised_contrastive_loss(const Matrix& v, std::span<const std::size_t> labels,
                                       const ContrastiveConfig& cfg);

enum class PriorScope { task, batch };

/// Running class counts D_t of the current scope plus the cumulative set of
/// classes seen so far. Counts reset whenever the task id changes.
class ClassPrior {
 public:
  explicit ClassPrior(std::size_t num_classes);

  /// Counts every label; resets counts first if `task_id` differs from the
  /// current scope. Labels join the seen set permanently.
  void update(std::size_t task_id, std::span<const std::size_t> labels);
  void reset_counts();

  std::size_t num_classes() const noexcept { return counts_.size(); }
  std::optional<std::size_t> scope() const noexcept { return scope_; }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
  const std::vector<bool>& seen() const noexcept { return seen_; }
  std::size_t seen_class_count() const;
  std::uint64_t total() const;

  /// P(k): count / total per class (0 for classes without counts).
  std::vector<double> distribution() const;

  /// log P(k) over seen classes, −∞ for unseen ones. When a seen class has
  /// zero count in scope every seen class is smoothed to
  /// (count + 1) / (total + |seen|).
  std::vector<double> log_prior() const;

 private:
  std::vector<std::uint64_t> counts_;
  std::vector<bool> seen_;
  std::optional<std::size_t> scope_;
};

void update_prior(ClassPrior& prior, std::size_t task_id, std::span<const std::size_t> labels);

/// Cross-entropy on logits shifted by log P(k), softmax restricted to seen
/// classes. Throws LabelError for labels outside the seen set.
LossResult equalization_loss(const Matrix& logits, std::span<const std::size_t> labels,
                             const ClassPrior& prior);

/// Plain cross-entropy with the softmax restricted to `seen_mask`.
LossResult cross_entropy_loss(const Matrix& logits, std::span<const std::size_t> labels,
                              const std::vector<bool>& seen_mask);

}  // namespace delta
