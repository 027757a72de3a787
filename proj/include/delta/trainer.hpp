#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "delta/buffer.hpp"
#include "delta/eval.hpp"
#include "delta/losses.hpp"
#include "delta/model.hpp"
#include "delta/stream.hpp"

namespace delta {

enum class Method { delta, er_ce };
enum class HeadLoss { equalization, cross_entropy };

std::string to_string(Method m);
std::string to_string(HeadLoss l);
std::string to_string(PriorScope s);

struct TrainConfig {
  Method method = Method::delta;
  /// Stage-2 loss for Method::delta; the CE arm exists for ablations.
  HeadLoss stage2_loss = HeadLoss::equalization;
  PairingConfig pairing;
  std::size_t buffer_capacity = 200;
  SgdConfig sgd;
  ContrastiveConfig contrastive;
  PriorScope prior_scope = PriorScope::task;
  std::size_t stage2_steps_per_batch = 1;
  /// Augmentation strength; its seed is replaced by one derived from `seed`.
  AugmentConfig augment;
  /// Training seed: buffer sampling and augmentation.
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t task = 0;
  std::size_t stream_samples = 0;
  std::size_t exemplars = 0;
  std::size_t combined_size = 0;
  /// Contrastive loss (delta) or the single joint CE loss (er_ce).
  std::optional<double> stage1_loss;
  /// Classifier loss of the last stage-2 repetition (delta only).
  std::optional<double> stage2_loss;
};

enum class StageEvent { before_stage1, after_stage1, before_stage2, after_stage2 };
using StageObserver = std::function<void(StageEvent, const Network&)>;

/// Everything a run mutates. Owned by one trainer loop at a time.
class RunState {
 public:
  RunState(const ModelConfig& model_cfg, std::uint64_t model_seed, const TrainConfig& cfg);

  Network network;
  ReplayBuffer buffer;
  ClassPrior prior;
  Augmenter augmenter;
  std::optional<std::size_t> current_task;
  std::size_t steps = 0;
  std::size_t consumed_samples = 0;
  std::vector<StepRecord> loss_log;
  StageObserver observer;

  /// Records (task, index); throws SinglePassError if already consumed.
  void mark_consumed(const Batch& batch);

  /// Labels the prior has counted in the current task scope (recount oracle
  /// support); cleared whenever the task changes.
  const std::vector<std::size_t>& scope_labels() const noexcept { return scope_labels_; }

 private:
  friend StepRecord delta_step(RunState&, const Batch&, const TrainConfig&);
  friend StepRecord er_ce_step(RunState&, const Batch&, const TrainConfig&);
  void enter_task(std::size_t task_id);
  void notify(StageEvent e) const;

  std::set<std::pair<std::size_t, std::size_t>> consumed_;
  std::vector<std::size_t> scope_labels_;
};

/// One dual-stage step: retrieve exemplars, build G_t, contrastive update of
/// encoder + projection, prior update, classifier update on frozen
/// embeddings, then reservoir update with the stream batch.
StepRecord delta_step(RunState& state, const Batch& batch, const TrainConfig& cfg);

/// Experience-replay baseline: joint CE on stream batch ∪ exemplars.
StepRecord er_ce_step(RunState& state, const Batch& batch, const TrainConfig& cfg);

StepRecord train_step(RunState& state, const Batch& batch, const TrainConfig& cfg);

struct ExperimentResult {
  AccuracyMatrix accuracy;
  /// Confusion over all seen classes after each task.
  std::vector<ConfusionMatrix> confusions;
  std::vector<StepRecord> loss_log;
  std::vector<std::size_t> class_counts;
  HeadTailAccuracy final_breakdown;
  double average_accuracy = 0.0;
  std::optional<double> forgetting;
  std::size_t steps = 0;
  std::size_t consumed_samples = 0;
  std::size_t total_samples = 0;
  double wall_seconds = 0.0;
  Samples final_buffer;
};

/// Trains on every task in order and evaluates on the test samples of the
/// classes seen so far after each task.
ExperimentResult run_experiment(StreamSet& streams, std::span<const LabeledVector> test_set,
                                const ModelConfig& model_cfg, std::uint64_t model_seed,
                                const TrainConfig& cfg, StageObserver observer = {});

}  // namespace delta
