#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "delta/numeric.hpp"

namespace delta {

struct LabeledVector {
  std::vector<double> features;
  std::size_t label = 0;

  bool operator==(const LabeledVector&) const = default;
  auto operator<=>(const LabeledVector&) const = default;
};

using Samples = std::vector<LabeledVector>;

/// Stacks sample features into a (n × dim) matrix.
Matrix feature_matrix(std::span<const LabeledVector> samples);
std::vector<std::size_t> labels_of(std::span<const LabeledVector> samples);

/// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

enum class Partition { train, test };

/// Per-class sample provider. Train and test partitions never share samples.
class SampleSource {
 public:
  virtual ~SampleSource() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::size_t dim() const = 0;
  /// Draws `n` samples of class `cls`. Deterministic in (cls, n, part, seed).
  virtual Samples draw(std::size_t cls, std::size_t n, Partition part,
                       std::uint64_t seed) const = 0;
};

/// Isotropic Gaussian clusters around seeded unit-norm class means.
class SyntheticSource final : public SampleSource {
 public:
  SyntheticSource(std::size_t num_classes, std::size_t dim, double cluster_spread,
                  std::uint64_t seed);

  std::size_t num_classes() const override { return means_.size(); }
  std::size_t dim() const override { return dim_; }
  Samples draw(std::size_t cls, std::size_t n, Partition part,
               std::uint64_t seed) const override;

  std::span<const double> mean(std::size_t cls) const { return means_.at(cls); }
  double cluster_spread() const { return spread_; }

 private:
  std::size_t dim_;
  double spread_;
  std::uint64_t seed_;
  std::vector<std::vector<double>> means_;
};

std::unique_ptr<SyntheticSource> make_synthetic_source(std::size_t num_classes, std::size_t dim,
                                                       double cluster_spread, std::uint64_t seed);

/// Finite per-class pools loaded from files.
class PooledSource final : public SampleSource {
 public:
  /// Uses `train` and `test` as separate pools.
  PooledSource(Samples train, Samples test);
  /// Holds out `test_per_class` samples of every class from `all` (seeded).
  static PooledSource holdout(Samples all, std::size_t test_per_class, std::uint64_t seed);

  std::size_t num_classes() const override { return train_.size(); }
  std::size_t dim() const override { return dim_; }
  Samples draw(std::size_t cls, std::size_t n, Partition part,
               std::uint64_t seed) const override;

  std::size_t available(std::size_t cls, Partition part) const;

 private:
  std::size_t dim_ = 0;
  std::vector<Samples> train_;
  std::vector<Samples> test_;
};

struct StreamConfig {
  double rho = 0.01;
  std::size_t num_classes = 20;
  std::size_t max_per_class = 500;
  std::vector<std::size_t> classes_per_task = std::vector<std::size_t>(10, 2);
  std::size_t batch_size = 16;
  bool shuffle_classes = false;
  std::uint64_t seed = 0;

  std::size_t num_tasks() const { return classes_per_task.size(); }
  void validate() const;
};

/// count_j = max(1, round(n_max · rho^((j−1)/(K−1)))); K = 1 gives [n_max].
std::vector<std::size_t> long_tail_counts(double rho, std::size_t num_classes,
                                          std::size_t max_per_class);

struct Batch {
  std::size_t task_id = 0;
  std::size_t index = 0;
  Samples samples;
};

/// One task's batches. The batches can be taken exactly once.
class TaskStream {
 public:
  TaskStream(std::size_t task_id, std::vector<std::size_t> class_ids, std::vector<Batch> batches);

  std::size_t task_id() const noexcept { return task_id_; }
  const std::vector<std::size_t>& class_ids() const noexcept { return class_ids_; }
  std::size_t batch_count() const noexcept { return batch_count_; }
  std::size_t sample_count() const noexcept { return sample_count_; }
  bool consumed() const noexcept { return consumed_; }

  /// Hands over the batches. Throws SinglePassError on a second call.
  std::vector<Batch> consume();

 private:
  std::size_t task_id_;
  std::vector<std::size_t> class_ids_;
  std::vector<Batch> batches_;
  std::size_t batch_count_ = 0;
  std::size_t sample_count_ = 0;
  bool consumed_ = false;
};

/// Result of build_stream: the per-task streams plus the per-class training
/// counts actually drawn (indexed by class id).
struct StreamSet {
  std::vector<TaskStream> tasks;
  std::vector<std::size_t> class_counts;
  std::size_t total_samples = 0;
};

StreamSet build_stream(const SampleSource& source, const StreamConfig& cfg);

/// `per_class` samples of each of the first `num_classes` classes, from the
/// test partition.
Samples make_balanced_test_split(const SampleSource& source, std::size_t num_classes,
                                 std::size_t per_class, std::uint64_t seed);

struct AugmentConfig {
  double noise_sigma = 0.1;
  double mask_prob = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Stochastic label-preserving view generator: additive Gaussian noise
/// followed by independent feature masking.
class Augmenter {
 public:
  explicit Augmenter(AugmentConfig cfg);

  Samples operator()(std::span<const LabeledVector> batch);
  const AugmentConfig& config() const noexcept { return cfg_; }

 private:
  AugmentConfig cfg_;
  std::mt19937_64 rng_;
};

Samples augment(std::span<const LabeledVector> batch, Augmenter& augmenter);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255 and flattened row-major.
Samples load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

/// One row per sample: label,feature1,...,featureN.
Samples load_csv_dataset(const std::filesystem::path& path);
void write_csv_dataset(const std::filesystem::path& path, std::span<const LabeledVector> samples);

}  // namespace delta
