#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "delta/error.hpp"
#include "delta/experiment.hpp"

using nlohmann::json;

namespace {

// Flag values that were given on the command line; anything left empty
// keeps the value from the config file (or the built-in default).
struct Overrides {
  std::string config;
  std::optional<std::string> dataset;
  std::optional<double> rho;
  std::optional<std::size_t> tasks;
  std::optional<std::string> classes_per_task;
  std::optional<std::size_t> num_classes;
  std::optional<std::size_t> max_per_class;
  std::optional<std::size_t> buffer_size;
  std::optional<std::size_t> pairing;
  std::optional<double> tau;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> prior_scope;
  std::optional<std::string> method;
  std::optional<std::string> stage2_loss;
  std::optional<std::size_t> stage2_steps;
  std::optional<std::string> seeds;
  std::optional<std::string> out;
  std::optional<std::size_t> dim;
  std::optional<double> cluster_spread;
  std::optional<std::size_t> test_per_class;
  std::optional<std::string> train_images, train_labels, test_images, test_labels;
  std::optional<std::string> train_csv, test_csv;
  bool shuffle_classes = false;
};

void add_common_flags(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--config", o.config, "JSON experiment file; flags override its values");
  cmd.add_option("--dataset", o.dataset, "synthetic, idx or csv");
  cmd.add_option("--rho", o.rho, "imbalance ratio (tail count / head count)");
  cmd.add_option("--tasks", o.tasks, "number of tasks");
  cmd.add_option("--classes-per-task", o.classes_per_task, "one count, or a comma list per task");
  cmd.add_option("--num-classes", o.num_classes, "total classes (defaults to the task layout sum)");
  cmd.add_option("--max-per-class", o.max_per_class, "training samples of the most frequent class");
  cmd.add_option("--buffer-size", o.buffer_size, "replay buffer capacity M");
  cmd.add_option("--pairing", o.pairing, "exemplars retrieved per stream sample");
  cmd.add_option("--tau", o.tau, "contrastive temperature");
  cmd.add_option("--lr", o.lr, "SGD learning rate");
  cmd.add_option("--weight-decay", o.weight_decay, "SGD weight decay");
  cmd.add_option("--batch-size", o.batch_size, "stream batch size");
  cmd.add_option("--prior-scope", o.prior_scope, "task or batch");
  cmd.add_option("--method", o.method, "delta or er_ce");
  cmd.add_option("--stage2-loss", o.stage2_loss, "eq or ce");
  cmd.add_option("--stage2-steps", o.stage2_steps, "classifier updates per stream batch");
  cmd.add_option("--seeds", o.seeds, "run seeds, e.g. 0,1,2 or 0..4");
  cmd.add_option("--out", o.out, "output directory");
  cmd.add_option("--dim", o.dim, "synthetic feature dimension");
  cmd.add_option("--cluster-spread", o.cluster_spread, "synthetic within-class spread");
  cmd.add_option("--test-per-class", o.test_per_class, "test samples per class");
  cmd.add_option("--train-images", o.train_images, "IDX training images");
  cmd.add_option("--train-labels", o.train_labels, "IDX training labels");
  cmd.add_option("--test-images", o.test_images, "IDX test images");
  cmd.add_option("--test-labels", o.test_labels, "IDX test labels");
  cmd.add_option("--train-csv", o.train_csv, "CSV training data");
  cmd.add_option("--test-csv", o.test_csv, "CSV test data");
  cmd.add_flag("--shuffle-classes", o.shuffle_classes, "permute labels before the long-tail split");
}

// List parsers report a generic field; name the flag instead.
template <class F>
auto relabel(const char* field, F parse) {
  try {
    return parse();
  } catch (const delta::ConfigError&) {
    throw delta::ConfigError(field, "cannot parse the list");
  }
}

json overlay(const Overrides& o) {
  json j = json::object();
  auto put = [&](const char* key, const auto& v) {
    if (v) j[key] = *v;
  };
  put("dataset", o.dataset);
  put("rho", o.rho);
  put("tasks", o.tasks);
  put("num_classes", o.num_classes);
  put("max_per_class", o.max_per_class);
  put("buffer_size", o.buffer_size);
  put("pairing", o.pairing);
  put("tau", o.tau);
  put("lr", o.lr);
  put("weight_decay", o.weight_decay);
  put("batch_size", o.batch_size);
  put("prior_scope", o.prior_scope);
  put("method", o.method);
  put("stage2_loss", o.stage2_loss);
  put("stage2_steps", o.stage2_steps);
  put("seeds", o.seeds);
  put("out", o.out);
  put("dim", o.dim);
  put("cluster_spread", o.cluster_spread);
  put("test_per_class", o.test_per_class);
  put("train_images", o.train_images);
  put("train_labels", o.train_labels);
  put("test_images", o.test_images);
  put("test_labels", o.test_labels);
  put("train_csv", o.train_csv);
  put("test_csv", o.test_csv);
  if (o.classes_per_task) {
    const auto counts = relabel("classes_per_task", [&] { return delta::parse_count_list(*o.classes_per_task); });
    j["classes_per_task"] = counts.size() == 1 ? json(counts.front()) : json(counts);
  }
  if (o.shuffle_classes) j["shuffle_classes"] = true;
  return j;
}

delta::ExperimentSpec build_spec(const Overrides& o) {
  delta::ExperimentSpec base;
  if (!o.config.empty()) base = delta::load_spec_file(o.config);
  return delta::spec_from_json(overlay(o), base);
}

std::size_t worker_count() {
  const char* env = std::getenv("DELTA_WORKERS");
  if (!env || !*env) return 1;
  const auto n = relabel("DELTA_WORKERS", [&] { return delta::parse_count_list(env); });
  if (n.size() != 1 || n.front() == 0)
    throw delta::ConfigError("DELTA_WORKERS", "expected a positive integer");
  return n.front();
}

std::string cell(const delta::Statistic& s) {
  if (!s.mean) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", *s.mean, *s.std);
  return buf;
}

void print_summary(const delta::SummaryFile& file, const std::filesystem::path& out) {
  for (const auto& p : file.points)
    std::cout << p.label << ": A_T " << cell(p.average_accuracy) << ", F_T " << cell(p.forgetting)
              << ", head " << cell(p.head) << ", tail " << cell(p.tail) << ", wall "
              << cell(p.wall_seconds) << " s\n";
  std::cout << "results in " << out.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed online continual learning experiments"};
  app.require_subcommand(1);

  Overrides o;
  std::string rhos = "0.005,0.03,0.07,0.1,1.0";
  std::string ms = "1,2,5,10,15";

  auto* run = app.add_subcommand("run", "train every seed and summarize");
  auto* imb = app.add_subcommand("sweep-imbalance", "repeat the run for each imbalance ratio");
  auto* pair = app.add_subcommand("sweep-pairing", "repeat the run for each pairing count m");
  auto* cmp = app.add_subcommand("compare-losses", "stage-2 equalization loss against cross-entropy");
  auto* inspect = app.add_subcommand("inspect-buffer", "train the first seed and dump the buffer");
  for (auto* cmd : {run, imb, pair, cmp, inspect}) add_common_flags(*cmd, o);
  imb->add_option("--rhos", rhos, "comma list of imbalance ratios")->capture_default_str();
  pair->add_option("--ms", ms, "comma list of pairing counts")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  delta::ExperimentSpec spec;
  std::size_t workers = 1;
  std::vector<double> rho_list;
  std::vector<std::size_t> m_list;
  try {
    spec = build_spec(o);
    workers = worker_count();
    if (imb->parsed()) rho_list = relabel("rhos", [&] { return delta::parse_real_list(rhos); });
    if (pair->parsed()) m_list = relabel("ms", [&] { return delta::parse_count_list(ms); });
    spec.validate();
  } catch (const delta::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  const delta::ProgressFn progress = [](const std::string& line) { std::cerr << line << '\n'; };
  try {
    delta::SummaryFile summary;
    if (run->parsed()) summary = delta::run_verb(spec, workers, progress);
    if (imb->parsed()) summary = delta::sweep_imbalance(spec, rho_list, workers, progress);
    if (pair->parsed()) summary = delta::sweep_pairing(spec, m_list, workers, progress);
    if (cmp->parsed()) summary = delta::compare_losses(spec, workers, progress);
    if (inspect->parsed()) summary = delta::inspect_buffer(spec, progress);
    print_summary(summary, spec.out);
  } catch (const delta::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
