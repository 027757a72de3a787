#include "delta/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "delta/error.hpp"

namespace delta {

std::string to_string(Method m) { return m == Method::delta ? "delta" : "er_ce"; }

std::string to_string(HeadLoss l) {
  return l == HeadLoss::equalization ? "equalization" : "cross_entropy";
}

std::string to_string(PriorScope s) { return s == PriorScope::task ? "task" : "batch"; }

void TrainConfig::validate() const {
  sgd.validate();
  contrastive.validate();
  augment.validate();
  if (buffer_capacity == 0) throw ConfigError("buffer_size", "must be at least 1");
  if (stage2_steps_per_batch == 0)
    throw ConfigError("stage2_steps_per_batch", "must be at least 1");
}

namespace {

AugmentConfig seeded(AugmentConfig a, std::uint64_t seed) {
  a.seed = mix_seed(seed, 0x61756721ULL);
  return a;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(std::string("non-finite ") + what);
}

}  // namespace

RunState::RunState(const ModelConfig& model_cfg, std::uint64_t model_seed, const TrainConfig& cfg)
    : network(model_cfg, model_seed),
      buffer(cfg.buffer_capacity, mix_seed(cfg.seed, 1)),
      prior(model_cfg.num_classes_max),
      augmenter(seeded(cfg.augment, cfg.seed)) {
  cfg.validate();
}

void RunState::mark_consumed(const Batch& batch) {
  if (!consumed_.emplace(batch.task_id, batch.index).second) {
    throw SinglePassError("batch " + std::to_string(batch.index) + " of task " +
                          std::to_string(batch.task_id) + " was already used for training");
  }
}

void RunState::enter_task(std::size_t task_id) {
  if (current_task != task_id) {
    current_task = task_id;
    scope_labels_.clear();
  }
}

void RunState::notify(StageEvent e) const {
  if (observer) observer(e, network);
}

StepRecord delta_step(RunState& state, const Batch& batch, const TrainConfig& cfg) {
  state.mark_consumed(batch);
  state.enter_task(batch.task_id);
  Network& net = state.network;
  const auto params = net.parameters();

  StepRecord rec;
  rec.step = state.steps;
  rec.task = batch.task_id;
  rec.stream_samples = batch.samples.size();

  const Samples exemplars = pair_exemplars(batch.samples, state.buffer, cfg.pairing);
  const CombinedBatch g = compose_combined_batch(batch.samples, exemplars, state.augmenter);
  rec.exemplars = exemplars.size();
  rec.combined_size = g.size();
  const Matrix x = feature_matrix(g.samples);
  const auto labels = labels_of(g.samples);

  // Stage 1: representation learning.
  net.set_stage(Stage::one);
  state.notify(StageEvent::before_stage1);
  {
    const EncoderTrace enc = net.encode_traced(x);
    const ProjectionTrace proj = net.project_traced(enc.embedding);
    const LossResult loss = supervised_contrastive_loss(proj.projection, labels, cfg.contrastive);
    require_finite(loss.value, "contrastive loss");
    const Matrix grad_e = net.backward_projection(enc.embedding, proj, loss.gradient);
    net.backward_encoder(enc, grad_e);
    sgd_step(params, cfg.sgd);
    rec.stage1_loss = loss.value;
  }
  state.notify(StageEvent::after_stage1);

  if (cfg.prior_scope == PriorScope::batch) {
    state.prior.reset_counts();
    state.scope_labels_.clear();
  }
  state.prior.update(batch.task_id, labels);
  state.scope_labels_.insert(state.scope_labels_.end(), labels.begin(), labels.end());

  // Stage 2: classifier on frozen embeddings.
  net.set_stage(Stage::two);
  state.notify(StageEvent::before_stage2);
  {
    const Matrix e = net.encode(x);
    for (std::size_t r = 0; r < cfg.stage2_steps_per_batch; ++r) {
      const Matrix logits = net.classify(e);
      const LossResult loss = cfg.stage2_loss == HeadLoss::equalization
                                  ? equalization_loss(logits, labels, state.prior)
                                  : cross_entropy_loss(logits, labels, state.prior.seen());
      require_finite(loss.value, "classifier loss");
      net.backward_classifier(e, loss.gradient);
      sgd_step(params, cfg.sgd);
      rec.stage2_loss = loss.value;
    }
  }
  state.notify(StageEvent::after_stage2);

  state.buffer.reservoir_update(batch.samples);
  ++state.steps;
  state.consumed_samples += batch.samples.size();
  state.loss_log.push_back(rec);
  return rec;
}

StepRecord er_ce_step(RunState& state, const Batch& batch, const TrainConfig& cfg) {
  state.mark_consumed(batch);
  state.enter_task(batch.task_id);
  Network& net = state.network;

  StepRecord rec;
  rec.step = state.steps;
  rec.task = batch.task_id;
  rec.stream_samples = batch.samples.size();

  Samples mixed = batch.samples;
  const Samples exemplars = pair_exemplars(batch.samples, state.buffer, cfg.pairing);
  mixed.insert(mixed.end(), exemplars.begin(), exemplars.end());
  rec.exemplars = exemplars.size();
  rec.combined_size = mixed.size();
  const auto labels = labels_of(mixed);

  if (cfg.prior_scope == PriorScope::batch) state.prior.reset_counts();
  state.prior.update(batch.task_id, labels);

  net.set_stage(Stage::joint);
  const EncoderTrace enc = net.encode_traced(feature_matrix(mixed));
  const Matrix logits = net.classify(enc.embedding);
  const LossResult loss = cross_entropy_loss(logits, labels, state.prior.seen());
  require_finite(loss.value, "cross-entropy loss");
  const Matrix grad_e = net.backward_classifier(enc.embedding, loss.gradient);
  net.backward_encoder(enc, grad_e);
  sgd_step(net.parameters(), cfg.sgd);
  rec.stage1_loss = loss.value;

  state.buffer.reservoir_update(batch.samples);
  ++state.steps;
  state.consumed_samples += batch.samples.size();
  state.loss_log.push_back(rec);
  return rec;
}

StepRecord train_step(RunState& state, const Batch& batch, const TrainConfig& cfg) {
  return cfg.method == Method::delta ? delta_step(state, batch, cfg)
                                     : er_ce_step(state, batch, cfg);
}

ExperimentResult run_experiment(StreamSet& streams, std::span<const LabeledVector> test_set,
                                const ModelConfig& model_cfg, std::uint64_t model_seed,
                                const TrainConfig& cfg, StageObserver observer) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t T = streams.tasks.size();
  RunState state(model_cfg, model_seed, cfg);
  state.observer = std::move(observer);

  ExperimentResult out;
  out.accuracy = AccuracyMatrix(T);
  out.class_counts = streams.class_counts;
  out.total_samples = streams.total_samples;

  std::vector<std::size_t> seen;
  std::vector<std::vector<std::size_t>> task_classes;
  for (std::size_t t = 0; t < T; ++t) {
    auto& task = streams.tasks[t];
    for (const Batch& b : task.consume()) train_step(state, b, cfg);

    task_classes.push_back(task.class_ids());
    seen.insert(seen.end(), task.class_ids().begin(), task.class_ids().end());
    std::sort(seen.begin(), seen.end());

    Samples visible;
    for (const auto& s : test_set)
      if (std::binary_search(seen.begin(), seen.end(), s.label)) visible.push_back(s);
    EvalResult res = evaluate(state.network, visible, seen);

    // Per-task accuracy from the rows of that task's classes.
    for (std::size_t j = 0; j <= t; ++j) {
      std::uint64_t total = 0;
      std::uint64_t correct = 0;
      for (std::size_t c : task_classes[j]) {
        const std::size_t i = res.confusion.position(c);
        for (auto n : res.confusion.counts[i]) total += n;
        correct += res.confusion.counts[i][i];
      }
      if (total == 0) {
        throw DataError("test set has no samples for the classes of task " + std::to_string(j));
      }
      out.accuracy.set(t, j, static_cast<double>(correct) / static_cast<double>(total));
    }
    out.confusions.push_back(std::move(res.confusion));
  }

  out.average_accuracy = average_accuracy(out.accuracy, T);
  if (T >= 2) out.forgetting = average_forgetting(out.accuracy, T);
  out.final_breakdown = headtail_breakdown(out.confusions.back(), out.class_counts);
  out.loss_log = std::move(state.loss_log);
  out.steps = state.steps;
  out.consumed_samples = state.consumed_samples;
  out.final_buffer = state.buffer.slots();
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace delta
