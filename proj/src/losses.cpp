#include "delta/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "delta/error.hpp"

namespace delta {

void ContrastiveConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("tau", "temperature must be positive");
}

LossResult supervised_contrastive_loss(const Matrix& v, std::span<const std::size_t> labels,
                                       const ContrastiveConfig& cfg) {
  cfg.validate();
  const std::size_t n = v.rows();
  if (labels.size() != n) {
    throw DimensionError("supervised_contrastive_loss: " + std::to_string(labels.size()) +
                         " labels for " + v.shape_string() + " projections");
  }
  if (n < 2) throw DegenerateBatchError("contrastive loss needs at least two samples");

  const double inv_tau = 1.0 / cfg.temperature;
  Matrix sim = matmul_a_bt(v, v);
  for (double& s : sim.values()) s *= inv_tau;

  // coef(j, k) = d L_j / d sim(j, k)
  Matrix coef(n, n);
  double total = 0.0;
  std::size_t anchors = 0;
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t positives = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != j && labels[k] == labels[j]) ++positives;
    if (positives == 0) continue;

    auto s = sim.row(j);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k)
      if (k != j) mx = std::max(mx, s[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != j) z += std::exp(s[k] - mx);
    const double lse = mx + std::log(z);

    const double inv_pos = 1.0 / static_cast<double>(positives);
    double pos_sum = 0.0;
    auto c = coef.row(j);
    for (std::size_t k = 0; k < n; ++k) {
      if (k == j) continue;
      c[k] = std::exp(s[k] - lse);
      if (labels[k] == labels[j]) {
        pos_sum += s[k];
        c[k] -= inv_pos;
      }
    }
    total += lse - pos_sum * inv_pos;
    ++anchors;
  }

  LossResult out;
  out.gradient = Matrix(n, v.cols());
  if (anchors == 0) return out;

  const double scale = inv_tau / static_cast<double>(anchors);
  Matrix sym(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) sym(j, k) = (coef(j, k) + coef(k, j)) * scale;
  out.gradient = matmul(sym, v);
  // Rounding can leave a tiny negative value when positives dominate.
  out.value = std::max(0.0, total / static_cast<double>(anchors));
  return out;
}

// ---------------------------------------------------------------------------
// Class prior

ClassPrior::ClassPrior(std::size_t num_classes)
    : counts_(num_classes, 0), seen_(num_classes, false) {}

void ClassPrior::update(std::size_t task_id, std::span<const std::size_t> labels) {
  if (scope_ != task_id) {
    reset_counts();
    scope_ = task_id;
  }
  for (std::size_t y : labels) {
    if (y >= counts_.size()) {
      throw LabelError("label " + std::to_string(y) + " outside " +
                       std::to_string(counts_.size()) + " classes");
    }
    ++counts_[y];
    seen_[y] = true;
  }
}

void ClassPrior::reset_counts() { std::fill(counts_.begin(), counts_.end(), 0); }

std::size_t ClassPrior::seen_class_count() const {
  return static_cast<std::size_t>(std::count(seen_.begin(), seen_.end(), true));
}

std::uint64_t ClassPrior::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::vector<double> ClassPrior::distribution() const {
  std::vector<double> p(counts_.size(), 0.0);
  const double t = static_cast<double>(total());
  if (t == 0.0) return p;
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = static_cast<double>(counts_[k]) / t;
  return p;
}

std::vector<double> ClassPrior::log_prior() const {
  std::vector<double> out(counts_.size(), -std::numeric_limits<double>::infinity());
  bool gap = false;
  for (std::size_t k = 0; k < counts_.size(); ++k)
    if (seen_[k] && counts_[k] == 0) gap = true;
  const double t = static_cast<double>(total());
  const double seen = static_cast<double>(seen_class_count());
  for (std::size_t k = 0; k < counts_.size(); ++k) {
    if (!seen_[k]) continue;
    const double n = static_cast<double>(counts_[k]);
    out[k] = gap ? std::log((n + 1.0) / (t + seen)) : std::log(n / t);
  }
  return out;
}

void update_prior(ClassPrior& prior, std::size_t task_id, std::span<const std::size_t> labels) {
  prior.update(task_id, labels);
}

// ---------------------------------------------------------------------------
// Classification losses

namespace {

/// Mean −log softmax(logits + shift)[y] over columns in `mask`.
LossResult masked_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels,
                                const std::vector<bool>& mask, std::span<const double> shift) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  if (labels.size() != n) {
    throw DimensionError("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                         logits.shape_string() + " logits");
  }
  if (mask.size() != k) {
    throw DimensionError("cross-entropy: class mask of length " + std::to_string(mask.size()) +
                         " for " + logits.shape_string() + " logits");
  }
  for (std::size_t y : labels) {
    if (y >= k || !mask[y]) {
      throw LabelError("label " + std::to_string(y) + " is not among the seen classes");
    }
  }

  LossResult out;
  out.gradient = Matrix(n, k);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  std::vector<double> adjusted(k);
  for (std::size_t i = 0; i < n; ++i) {
    auto o = logits.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (!mask[c]) continue;
      adjusted[c] = o[c] + (shift.empty() ? 0.0 : shift[c]);
      mx = std::max(mx, adjusted[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      if (mask[c]) z += std::exp(adjusted[c] - mx);
    const double lse = mx + std::log(z);
    total += lse - adjusted[labels[i]];

    auto g = out.gradient.row(i);
    for (std::size_t c = 0; c < k; ++c)
      if (mask[c]) g[c] = std::exp(adjusted[c] - lse) * inv_n;
    g[labels[i]] -= inv_n;
  }
  out.value = std::max(0.0, total * inv_n);
  return out;
}

}  // namespace

LossResult equalization_loss(const Matrix& logits, std::span<const std::size_t> labels,
                             const ClassPrior& prior) {
  if (prior.num_classes() != logits.cols()) {
    throw DimensionError("equalization_loss: prior over " + std::to_string(prior.num_classes()) +
                         " classes for " + logits.shape_string() + " logits");
  }
  const auto shift = prior.log_prior();
  return masked_cross_entropy(logits, labels, prior.seen(), shift);
}

LossResult cross_entropy_loss(const Matrix& logits, std::span<const std::size_t> labels,
                              const std::vector<bool>& seen_mask) {
  return masked_cross_entropy(logits, labels, seen_mask, {});
}

}  // namespace delta
