#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "delta/eval.hpp"
#include "delta/trainer.hpp"

namespace delta {

enum class DatasetKind { synthetic, idx, csv };

std::string to_string(DatasetKind kind);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::synthetic;
  std::size_t dim = 32;
  double cluster_spread = 0.3;
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::filesystem::path train_csv;
  std::filesystem::path test_csv;
  std::size_t test_per_class = 100;
};

/// Everything one invocation needs. The seeds inside `stream` and `train`
/// are ignored; per-run seeds come from `seeds` via derive_seeds().
struct ExperimentSpec {
  DatasetSpec dataset;
  StreamConfig stream;
  TrainConfig train;
  ModelConfig model;
  std::vector<std::uint64_t> seeds = {0};
  std::filesystem::path out = "delta-out";

  /// Checks every nested config and that `out` can be created and written.
  void validate() const;
};

struct DerivedSeeds {
  std::uint64_t stream = 0;
  std::uint64_t model = 0;
  std::uint64_t training = 0;
};

/// Fixed offsets from the run seed.
DerivedSeeds derive_seeds(std::uint64_t run_seed);

/// Flat key/value form used by config files and run.json.
nlohmann::json spec_to_json(const ExperimentSpec& spec);

/// Applies the keys of `j` on top of `base`. Unknown keys and wrongly typed
/// values raise ConfigError naming the key.
ExperimentSpec spec_from_json(const nlohmann::json& j, ExperimentSpec base = {});

ExperimentSpec load_spec_file(const std::filesystem::path& path);

/// Parses "0,1,2" or an inclusive range "0..4".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<double> parse_real_list(const std::string& text);
std::vector<std::size_t> parse_count_list(const std::string& text);

struct SeedRun {
  std::uint64_t seed = 0;
  DerivedSeeds derived;
  ExperimentResult result;
};

/// Metrics of one run; optionals are absent when undefined (forgetting with
/// a single task, empty frequency groups).
struct RunMetrics {
  std::uint64_t seed = 0;
  double average_accuracy = 0.0;
  std::optional<double> forgetting;
  std::optional<double> head;
  std::optional<double> median;
  std::optional<double> tail;
  double wall_seconds = 0.0;
};

RunMetrics metrics_of(const SeedRun& run);

struct Statistic {
  std::optional<double> mean;
  /// Population standard deviation (0 for a single seed).
  std::optional<double> std;
};

/// Mean and population standard deviation; absent if any value is absent.
Statistic summarize(const std::vector<std::optional<double>>& values);

struct RunSummary {
  std::string label;
  nlohmann::json parameters = nlohmann::json::object();
  std::vector<RunMetrics> per_seed;
  Statistic average_accuracy;
  Statistic forgetting;
  Statistic head;
  Statistic median;
  Statistic tail;
  Statistic wall_seconds;
};

RunSummary summarize_runs(std::string label, nlohmann::json parameters,
                          const std::vector<SeedRun>& runs);

struct SummaryFile {
  std::string kind;
  std::vector<RunSummary> points;
};

inline constexpr int kSummaryVersion = 1;

nlohmann::json summary_to_json(const SummaryFile& file);
SummaryFile summary_from_json(const nlohmann::json& j);

/// Builds the stream and test set for one seed and trains. `spec.model`
/// input width and class count are taken from the data.
SeedRun run_single_seed(const ExperimentSpec& spec, std::uint64_t seed);

using ProgressFn = std::function<void(const std::string&)>;

/// Runs every seed of `spec` on up to `workers` threads; results follow the
/// order of spec.seeds.
std::vector<SeedRun> run_seeds(const ExperimentSpec& spec, std::size_t workers,
                               const ProgressFn& progress = {});

/// Writes run.json, per-seed artifacts and summary.json under spec.out.
RunSummary write_run_artifacts(const ExperimentSpec& spec, const std::string& verb,
                               const std::vector<SeedRun>& runs, const std::string& label,
                               const nlohmann::json& parameters);

// Verbs. Each writes its artifacts under spec.out and returns the summary.
SummaryFile run_verb(const ExperimentSpec& spec, std::size_t workers, const ProgressFn& progress = {});
SummaryFile sweep_imbalance(const ExperimentSpec& spec, const std::vector<double>& rhos,
                            std::size_t workers, const ProgressFn& progress = {});
SummaryFile sweep_pairing(const ExperimentSpec& spec, const std::vector<std::size_t>& ms,
                          std::size_t workers, const ProgressFn& progress = {});
SummaryFile compare_losses(const ExperimentSpec& spec, std::size_t workers,
                           const ProgressFn& progress = {});
/// Trains the first seed and dumps the final buffer contents.
SummaryFile inspect_buffer(const ExperimentSpec& spec, const ProgressFn& progress = {});

// Artifact files.

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

void write_table(const std::filesystem::path& path, const Table& table);
Table read_table(const std::filesystem::path& path);

/// Formats with enough digits to round-trip a double; empty for nullopt.
std::string format_number(std::optional<double> v);

void write_accuracy_csv(const std::filesystem::path& path, const AccuracyMatrix& mat);
AccuracyMatrix read_accuracy_csv(const std::filesystem::path& path);

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& conf);
void write_normalized_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& conf);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);
std::vector<std::vector<double>> read_normalized_confusion_csv(const std::filesystem::path& path);

void write_loss_log_csv(const std::filesystem::path& path, const std::vector<StepRecord>& log);
std::vector<StepRecord> read_loss_log_csv(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

SummaryFile read_summary(const std::filesystem::path& path);
ExperimentSpec read_run_spec(const std::filesystem::path& run_json);

}  // namespace delta
