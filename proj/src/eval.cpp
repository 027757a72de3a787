#include "delta/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "delta/error.hpp"

namespace delta {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks)
    : tasks_(tasks), entries_(tasks * (tasks + 1) / 2) {}

std::size_t AccuracyMatrix::index(std::size_t i, std::size_t j) const {
  if (i >= tasks_ || j > i) {
    throw DimensionError("accuracy matrix entry (" + std::to_string(i) + "," + std::to_string(j) +
                         ") outside lower triangle of " + std::to_string(tasks_) + " tasks");
  }
  return i * (i + 1) / 2 + j;
}

void AccuracyMatrix::set(std::size_t i, std::size_t j, double accuracy) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw Error("accuracy outside [0, 1]");
  entries_[index(i, j)] = accuracy;
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  const auto& e = entries_[index(i, j)];
  if (!e) {
    throw Error("accuracy matrix entry (" + std::to_string(i) + "," + std::to_string(j) +
                ") not filled");
  }
  return *e;
}

bool AccuracyMatrix::filled(std::size_t i, std::size_t j) const {
  return entries_[index(i, j)].has_value();
}

std::size_t AccuracyMatrix::row_fill(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j <= i; ++j)
    if (filled(i, j)) ++n;
  return n;
}

bool AccuracyMatrix::row_complete(std::size_t i) const { return row_fill(i) == i + 1; }

ConfusionMatrix::ConfusionMatrix(std::vector<std::size_t> class_ids)
    : classes(std::move(class_ids)) {
  std::sort(classes.begin(), classes.end());
  counts.assign(classes.size(), std::vector<std::uint64_t>(classes.size(), 0));
}

std::size_t ConfusionMatrix::position(std::size_t class_id) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), class_id);
  if (it == classes.end() || *it != class_id)
    throw LabelError("class " + std::to_string(class_id) + " not in confusion matrix");
  return static_cast<std::size_t>(it - classes.begin());
}

void ConfusionMatrix::add(std::size_t true_class, std::size_t predicted_class) {
  ++counts[position(true_class)][position(predicted_class)];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& r : counts) t = std::accumulate(r.begin(), r.end(), t);
  return t;
}

std::uint64_t ConfusionMatrix::correct() const {
  std::uint64_t c = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) c += counts[i][i];
  return c;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  return t == 0 ? 0.0 : static_cast<double>(correct()) / static_cast<double>(t);
}

std::vector<std::uint64_t> ConfusionMatrix::row_sums() const {
  std::vector<std::uint64_t> out;
  for (const auto& r : counts) out.push_back(std::accumulate(r.begin(), r.end(), std::uint64_t{0}));
  return out;
}

std::vector<std::vector<double>> ConfusionMatrix::normalized() const {
  std::vector<std::vector<double>> out;
  const auto sums = row_sums();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::vector<double> r(counts[i].size(), 0.0);
    if (sums[i] > 0)
      for (std::size_t j = 0; j < r.size(); ++j)
        r[j] = static_cast<double>(counts[i][j]) / static_cast<double>(sums[i]);
    out.push_back(std::move(r));
  }
  return out;
}

std::size_t predict_seen(std::span<const double> logits, const std::vector<bool>& seen_mask) {
  std::size_t best = logits.size();
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (!seen_mask[c]) continue;
    if (best == logits.size() || logits[c] > best_value) {
      best = c;
      best_value = logits[c];
    }
  }
  if (best == logits.size()) throw LabelError("no seen classes to predict from");
  return best;
}

EvalResult evaluate(const Predictor& predictor, std::span<const LabeledVector> test,
                    std::span<const std::size_t> seen_classes) {
  if (test.empty()) throw Error("evaluate: empty test set");
  EvalResult out{0.0, ConfusionMatrix({seen_classes.begin(), seen_classes.end()})};
  for (const auto& s : test) out.confusion.add(s.label, predictor(s));
  out.accuracy = out.confusion.accuracy();
  return out;
}

EvalResult evaluate(const Network& net, std::span<const LabeledVector> test,
                    std::span<const std::size_t> seen_classes, std::size_t batch_size) {
  if (test.empty()) throw Error("evaluate: empty test set");
  std::vector<bool> mask(net.config().num_classes_max, false);
  for (std::size_t c : seen_classes) {
    if (c >= mask.size()) throw LabelError("seen class " + std::to_string(c) + " exceeds head");
    mask[c] = true;
  }
  EvalResult out{0.0, ConfusionMatrix({seen_classes.begin(), seen_classes.end()})};
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const auto chunk = test.subspan(start, std::min(batch_size, test.size() - start));
    const Matrix logits = net.classify(net.encode(feature_matrix(chunk)));
    for (std::size_t i = 0; i < chunk.size(); ++i)
      out.confusion.add(chunk[i].label, predict_seen(logits.row(i), mask));
  }
  out.accuracy = out.confusion.accuracy();
  return out;
}

double average_accuracy(const AccuracyMatrix& mat, std::size_t T) {
  if (T == 0 || T > mat.tasks()) throw Error("average_accuracy: T out of range");
  const std::size_t row = T - 1;
  if (!mat.row_complete(row)) throw Error("average_accuracy: row " + std::to_string(T) + " incomplete");
  double sum = 0.0;
  for (std::size_t j = 0; j < T; ++j) sum += mat.at(row, j);
  return sum / static_cast<double>(T);
}

double average_forgetting(const AccuracyMatrix& mat, std::size_t T) {
  if (T < 2) throw Error("average_forgetting: needs at least two tasks");
  if (T > mat.tasks()) throw Error("average_forgetting: T out of range");
  const std::size_t last = T - 1;
  double sum = 0.0;
  for (std::size_t j = 0; j < last; ++j) {
    double best = mat.at(j, j);
    for (std::size_t i = j + 1; i < last; ++i) best = std::max(best, mat.at(i, j));
    sum += best - mat.at(last, j);
  }
  return sum / static_cast<double>(last);
}

ClassGroups partition_by_frequency(std::span<const std::size_t> classes,
                                   std::span<const std::size_t> train_counts) {
  std::vector<std::size_t> ranked(classes.begin(), classes.end());
  auto count_of = [&](std::size_t c) { return c < train_counts.size() ? train_counts[c] : 0; };
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    if (count_of(a) != count_of(b)) return count_of(a) > count_of(b);
    return a < b;
  });
  const std::size_t n = ranked.size();
  const std::size_t third =
      std::min(n / 2, static_cast<std::size_t>(std::llround(static_cast<double>(n) / 3.0)));
  ClassGroups g;
  g.head.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(third));
  g.median.assign(ranked.begin() + static_cast<std::ptrdiff_t>(third),
                  ranked.end() - static_cast<std::ptrdiff_t>(third));
  g.tail.assign(ranked.end() - static_cast<std::ptrdiff_t>(third), ranked.end());
  return g;
}

HeadTailAccuracy headtail_breakdown(const ConfusionMatrix& conf,
                                    std::span<const std::size_t> train_counts) {
  HeadTailAccuracy out;
  out.groups = partition_by_frequency(conf.classes, train_counts);
  auto group_accuracy = [&](const std::vector<std::size_t>& group) -> std::optional<double> {
    std::uint64_t total = 0;
    std::uint64_t correct = 0;
    for (std::size_t c : group) {
      const std::size_t i = conf.position(c);
      total = std::accumulate(conf.counts[i].begin(), conf.counts[i].end(), total);
      correct += conf.counts[i][i];
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
  };
  out.head = group_accuracy(out.groups.head);
  out.median = group_accuracy(out.groups.median);
  out.tail = group_accuracy(out.groups.tail);
  return out;
}

}  // namespace delta
