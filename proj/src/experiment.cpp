#include "delta/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "delta/error.hpp"

namespace delta {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::synthetic:
      return "synthetic";
    case DatasetKind::idx:
      return "idx";
    case DatasetKind::csv:
      return "csv";
  }
  return "synthetic";
}

// ---------------------------------------------------------------------------
// Spec validation and seeds

void ExperimentSpec::validate() const {
  stream.validate();
  train.validate();
  model.validate();
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds", "seeds must be distinct");
  if (dataset.test_per_class == 0) throw ConfigError("test_per_class", "must be at least 1");
  switch (dataset.kind) {
    case DatasetKind::synthetic:
      if (dataset.dim == 0) throw ConfigError("dim", "must be at least 1");
      if (!(dataset.cluster_spread >= 0.0) || !std::isfinite(dataset.cluster_spread))
        throw ConfigError("cluster_spread", "must be non-negative");
      break;
    case DatasetKind::idx:
      if (dataset.train_images.empty()) throw ConfigError("train_images", "required for idx data");
      if (dataset.train_labels.empty()) throw ConfigError("train_labels", "required for idx data");
      if (dataset.test_images.empty() != dataset.test_labels.empty())
        throw ConfigError("test_images", "test images and labels must be given together");
      break;
    case DatasetKind::csv:
      if (dataset.train_csv.empty()) throw ConfigError("train_csv", "required for csv data");
      break;
  }
  if (out.empty()) throw ConfigError("out", "an output directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  const fs::path probe = out / ".write-probe";
  {
    std::ofstream f(probe);
    if (ec || !f) throw ConfigError("out", "directory " + out.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

DerivedSeeds derive_seeds(std::uint64_t run_seed) {
  return {run_seed + 1'000'003ULL, run_seed + 2'000'003ULL, run_seed + 3'000'003ULL};
}

// ---------------------------------------------------------------------------
// Spec <-> JSON

namespace {

std::string method_name(Method m) { return m == Method::delta ? "delta" : "er_ce"; }

Method parse_method(const std::string& s) {
  if (s == "delta") return Method::delta;
  if (s == "er_ce" || s == "er-ce") return Method::er_ce;
  throw ConfigError("method", "unknown method '" + s + "' (expected delta or er_ce)");
}

HeadLoss parse_head_loss(const std::string& s) {
  if (s == "equalization" || s == "eq") return HeadLoss::equalization;
  if (s == "cross_entropy" || s == "ce") return HeadLoss::cross_entropy;
  throw ConfigError("stage2_loss", "unknown loss '" + s + "' (expected eq or ce)");
}

PriorScope parse_scope(const std::string& s) {
  if (s == "task") return PriorScope::task;
  if (s == "batch") return PriorScope::batch;
  throw ConfigError("prior_scope", "unknown scope '" + s + "' (expected task or batch)");
}

DatasetKind parse_dataset(const std::string& s) {
  if (s == "synthetic") return DatasetKind::synthetic;
  if (s == "idx") return DatasetKind::idx;
  if (s == "csv") return DatasetKind::csv;
  throw ConfigError("dataset", "unknown dataset '" + s + "' (expected synthetic, idx or csv)");
}

double get_real(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(key, "expected a number");
  return v.get<double>();
}

std::size_t count_value(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) throw ConfigError(key, "must not be negative");
    return static_cast<std::size_t>(v.get<std::int64_t>());
  }
  throw ConfigError(key, "expected a non-negative integer");
}

std::size_t get_count(const json& j, const std::string& key) { return count_value(j.at(key), key); }

std::vector<std::size_t> get_count_list(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(key, "expected a list of integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) out.push_back(count_value(e, key));
  return out;
}

std::string get_string(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(key, "expected a string");
  return v.get<std::string>();
}

bool get_bool(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
  return v.get<bool>();
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset",      "dim",          "cluster_spread", "train_images",   "train_labels",
      "test_images",  "test_labels",  "train_csv",      "test_csv",       "test_per_class",
      "rho",          "num_classes",  "max_per_class",  "tasks",          "classes_per_task",
      "batch_size",   "shuffle_classes", "method",      "stage2_loss",    "pairing",
      "buffer_size",  "lr",           "weight_decay",   "tau",            "prior_scope",
      "stage2_steps", "noise_sigma",  "mask_prob",      "hidden_dims",    "embed_dim",
      "proj_dim",     "seeds",        "out"};
  return keys;
}

}  // namespace

json spec_to_json(const ExperimentSpec& spec) {
  const auto& d = spec.dataset;
  json j;
  j["dataset"] = to_string(d.kind);
  j["dim"] = d.dim;
  j["cluster_spread"] = d.cluster_spread;
  j["train_images"] = d.train_images.string();
  j["train_labels"] = d.train_labels.string();
  j["test_images"] = d.test_images.string();
  j["test_labels"] = d.test_labels.string();
  j["train_csv"] = d.train_csv.string();
  j["test_csv"] = d.test_csv.string();
  j["test_per_class"] = d.test_per_class;
  j["rho"] = spec.stream.rho;
  j["num_classes"] = spec.stream.num_classes;
  j["max_per_class"] = spec.stream.max_per_class;
  j["classes_per_task"] = spec.stream.classes_per_task;
  j["batch_size"] = spec.stream.batch_size;
  j["shuffle_classes"] = spec.stream.shuffle_classes;
  j["method"] = method_name(spec.train.method);
  j["stage2_loss"] = to_string(spec.train.stage2_loss);
  j["pairing"] = spec.train.pairing.exemplars_per_input;
  j["buffer_size"] = spec.train.buffer_capacity;
  j["lr"] = spec.train.sgd.learning_rate;
  j["weight_decay"] = spec.train.sgd.weight_decay;
  j["tau"] = spec.train.contrastive.temperature;
  j["prior_scope"] = to_string(spec.train.prior_scope);
  j["stage2_steps"] = spec.train.stage2_steps_per_batch;
  j["noise_sigma"] = spec.train.augment.noise_sigma;
  j["mask_prob"] = spec.train.augment.mask_prob;
  j["hidden_dims"] = spec.model.hidden_dims;
  j["embed_dim"] = spec.model.embed_dim;
  j["proj_dim"] = spec.model.proj_dim;
  j["seeds"] = spec.seeds;
  j["out"] = spec.out.string();
  return j;
}

ExperimentSpec spec_from_json(const json& j, ExperimentSpec base) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known_keys().count(key)) throw ConfigError(key, "unknown configuration key");

  ExperimentSpec s = std::move(base);
  auto has = [&](const char* k) { return j.contains(k); };
  auto& d = s.dataset;
  if (has("dataset")) d.kind = parse_dataset(get_string(j, "dataset"));
  if (has("dim")) d.dim = get_count(j, "dim");
  if (has("cluster_spread")) d.cluster_spread = get_real(j, "cluster_spread");
  if (has("train_images")) d.train_images = get_string(j, "train_images");
  if (has("train_labels")) d.train_labels = get_string(j, "train_labels");
  if (has("test_images")) d.test_images = get_string(j, "test_images");
  if (has("test_labels")) d.test_labels = get_string(j, "test_labels");
  if (has("train_csv")) d.train_csv = get_string(j, "train_csv");
  if (has("test_csv")) d.test_csv = get_string(j, "test_csv");
  if (has("test_per_class")) d.test_per_class = get_count(j, "test_per_class");

  auto& st = s.stream;
  if (has("rho")) st.rho = get_real(j, "rho");
  if (has("max_per_class")) st.max_per_class = get_count(j, "max_per_class");
  if (has("batch_size")) st.batch_size = get_count(j, "batch_size");
  if (has("shuffle_classes")) st.shuffle_classes = get_bool(j, "shuffle_classes");

  // Task layout: an integer classes_per_task is repeated `tasks` times.
  const bool layout_changed = has("tasks") || has("classes_per_task");
  if (has("classes_per_task")) {
    if (j.at("classes_per_task").is_array()) {
      st.classes_per_task = get_count_list(j, "classes_per_task");
      if (has("tasks") && get_count(j, "tasks") != st.classes_per_task.size())
        throw ConfigError("tasks", "does not match the length of classes_per_task");
    } else {
      const std::size_t per = get_count(j, "classes_per_task");
      const std::size_t tasks = has("tasks") ? get_count(j, "tasks") : st.classes_per_task.size();
      st.classes_per_task.assign(tasks, per);
    }
  } else if (has("tasks")) {
    const std::size_t tasks = get_count(j, "tasks");
    const auto& cpt = st.classes_per_task;
    if (!cpt.empty() && std::adjacent_find(cpt.begin(), cpt.end(), std::not_equal_to<>()) != cpt.end())
      throw ConfigError("tasks", "cannot resize a non-uniform classes_per_task list");
    st.classes_per_task.assign(tasks, cpt.empty() ? 1 : cpt.front());
  }
  if (has("num_classes")) {
    st.num_classes = get_count(j, "num_classes");
  } else if (layout_changed) {
    st.num_classes = 0;
    for (std::size_t c : st.classes_per_task) st.num_classes += c;
  }

  auto& t = s.train;
  if (has("method")) t.method = parse_method(get_string(j, "method"));
  if (has("stage2_loss")) t.stage2_loss = parse_head_loss(get_string(j, "stage2_loss"));
  if (has("pairing")) t.pairing.exemplars_per_input = get_count(j, "pairing");
  if (has("buffer_size")) t.buffer_capacity = get_count(j, "buffer_size");
  if (has("lr")) t.sgd.learning_rate = get_real(j, "lr");
  if (has("weight_decay")) t.sgd.weight_decay = get_real(j, "weight_decay");
  if (has("tau")) t.contrastive.temperature = get_real(j, "tau");
  if (has("prior_scope")) t.prior_scope = parse_scope(get_string(j, "prior_scope"));
  if (has("stage2_steps")) t.stage2_steps_per_batch = get_count(j, "stage2_steps");
  if (has("noise_sigma")) t.augment.noise_sigma = get_real(j, "noise_sigma");
  if (has("mask_prob")) t.augment.mask_prob = get_real(j, "mask_prob");

  if (has("hidden_dims")) s.model.hidden_dims = get_count_list(j, "hidden_dims");
  if (has("embed_dim")) s.model.embed_dim = get_count(j, "embed_dim");
  if (has("proj_dim")) s.model.proj_dim = get_count(j, "proj_dim");

  if (has("seeds")) {
    const json& v = j.at("seeds");
    s.seeds.clear();
    if (v.is_array()) {
      for (const auto& e : v) s.seeds.push_back(count_value(e, "seeds"));
    } else if (v.is_string()) {
      s.seeds = parse_seed_list(v.get<std::string>());
    } else {
      throw ConfigError("seeds", "expected a list of integers");
    }
  }
  if (has("out")) s.out = get_string(j, "out");
  return s;
}

ExperimentSpec load_spec_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", path.string() + ": " + e.what());
  }
  return spec_from_json(j);
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& raw, const std::string& field) {
  const std::string s = trim(raw);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(field, "cannot parse '" + s + "'");
  return v;
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const auto lo = parse_number<std::uint64_t>(text.substr(0, dots), "seeds");
    const auto hi = parse_number<std::uint64_t>(text.substr(dots + 2), "seeds");
    if (hi < lo) throw ConfigError("seeds", "empty range " + text);
    std::vector<std::uint64_t> out;
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::vector<std::uint64_t> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_number<std::uint64_t>(part, "seeds"));
  if (out.empty()) throw ConfigError("seeds", "at least one seed is required");
  return out;
}

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& part : split(text, ',')) {
    const std::string s = trim(part);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw ConfigError("list", "cannot parse '" + s + "' as a number");
    }
  }
  if (out.empty()) throw ConfigError("list", "empty list");
  return out;
}

std::vector<std::size_t> parse_count_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_number<std::size_t>(part, "list"));
  if (out.empty()) throw ConfigError("list", "empty list");
  return out;
}

// ---------------------------------------------------------------------------
// Metrics and summaries

RunMetrics metrics_of(const SeedRun& run) {
  const ExperimentResult& r = run.result;
  RunMetrics m;
  m.seed = run.seed;
  m.average_accuracy = r.average_accuracy;
  m.forgetting = r.forgetting;
  m.head = r.final_breakdown.head;
  m.median = r.final_breakdown.median;
  m.tail = r.final_breakdown.tail;
  m.wall_seconds = r.wall_seconds;
  return m;
}

Statistic summarize(const std::vector<std::optional<double>>& values) {
  if (values.empty()) return {};
  double sum = 0.0;
  for (const auto& v : values) {
    if (!v) return {};
    sum += *v;
  }
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  double sq = 0.0;
  for (const auto& v : values) sq += (*v - mean) * (*v - mean);
  return {mean, std::sqrt(sq / n)};
}

RunSummary summarize_runs(std::string label, json parameters, const std::vector<SeedRun>& runs) {
  RunSummary s;
  s.label = std::move(label);
  s.parameters = std::move(parameters);
  for (const auto& r : runs) s.per_seed.push_back(metrics_of(r));
  auto column = [&](auto get) {
    std::vector<std::optional<double>> v;
    for (const auto& m : s.per_seed) v.push_back(get(m));
    return summarize(v);
  };
  s.average_accuracy = column([](const RunMetrics& m) { return std::optional(m.average_accuracy); });
  s.forgetting = column([](const RunMetrics& m) { return m.forgetting; });
  s.head = column([](const RunMetrics& m) { return m.head; });
  s.median = column([](const RunMetrics& m) { return m.median; });
  s.tail = column([](const RunMetrics& m) { return m.tail; });
  s.wall_seconds = column([](const RunMetrics& m) { return std::optional(m.wall_seconds); });
  return s;
}

namespace {

json opt(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json stat_json(const Statistic& s) { return {{"mean", opt(s.mean)}, {"std", opt(s.std)}}; }

Statistic stat_from(const json& j) { return {opt_from(j.at("mean")), opt_from(j.at("std"))}; }

const char* const kMetricNames[] = {"average_accuracy", "forgetting", "head",
                                    "median",           "tail",       "wall_seconds"};

}  // namespace

json summary_to_json(const SummaryFile& file) {
  json points = json::array();
  for (const auto& p : file.points) {
    json per_seed = json::array();
    json seeds = json::array();
    for (const auto& m : p.per_seed) {
      seeds.push_back(m.seed);
      per_seed.push_back({{"seed", m.seed},
                          {"average_accuracy", m.average_accuracy},
                          {"forgetting", opt(m.forgetting)},
                          {"head", opt(m.head)},
                          {"median", opt(m.median)},
                          {"tail", opt(m.tail)},
                          {"wall_seconds", m.wall_seconds}});
    }
    json stats = {{"average_accuracy", stat_json(p.average_accuracy)},
                  {"forgetting", stat_json(p.forgetting)},
                  {"head", stat_json(p.head)},
                  {"median", stat_json(p.median)},
                  {"tail", stat_json(p.tail)},
                  {"wall_seconds", stat_json(p.wall_seconds)}};
    points.push_back({{"label", p.label},
                      {"parameters", p.parameters},
                      {"seeds", seeds},
                      {"per_seed", per_seed},
                      {"statistics", stats}});
  }
  return {{"schema", "delta-summary"},
          {"version", kSummaryVersion},
          {"kind", file.kind},
          {"points", points}};
}

SummaryFile summary_from_json(const json& j) {
  try {
    if (j.at("schema") != "delta-summary") throw FormatError("not a summary file", 0);
    if (j.at("version") != kSummaryVersion) throw FormatError("unsupported summary version", 0);
    SummaryFile f;
    f.kind = j.at("kind").get<std::string>();
    for (const auto& p : j.at("points")) {
      RunSummary s;
      s.label = p.at("label").get<std::string>();
      s.parameters = p.at("parameters");
      for (const auto& m : p.at("per_seed")) {
        RunMetrics r;
        r.seed = m.at("seed").get<std::uint64_t>();
        r.average_accuracy = m.at("average_accuracy").get<double>();
        r.forgetting = opt_from(m.at("forgetting"));
        r.head = opt_from(m.at("head"));
        r.median = opt_from(m.at("median"));
        r.tail = opt_from(m.at("tail"));
        r.wall_seconds = m.at("wall_seconds").get<double>();
        s.per_seed.push_back(r);
      }
      const json& st = p.at("statistics");
      Statistic* targets[] = {&s.average_accuracy, &s.forgetting, &s.head,
                              &s.median,           &s.tail,       &s.wall_seconds};
      for (std::size_t i = 0; i < std::size(kMetricNames); ++i)
        *targets[i] = stat_from(st.at(kMetricNames[i]));
      f.points.push_back(std::move(s));
    }
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed summary: ") + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------
// Running

namespace {

struct PreparedData {
  std::unique_ptr<SampleSource> source;
  Samples test;
};

PreparedData prepare_data(const ExperimentSpec& spec, std::uint64_t stream_seed) {
  const auto& d = spec.dataset;
  const std::size_t K = spec.stream.num_classes;
  const std::uint64_t test_seed = mix_seed(stream_seed, 0x74657374ULL);
  PreparedData out;
  if (d.kind == DatasetKind::synthetic) {
    out.source = make_synthetic_source(K, d.dim, d.cluster_spread, stream_seed);
  } else {
    Samples train = d.kind == DatasetKind::idx ? load_idx_dataset(d.train_images, d.train_labels)
                                               : load_csv_dataset(d.train_csv);
    const bool has_test = d.kind == DatasetKind::idx ? !d.test_images.empty() : !d.test_csv.empty();
    if (has_test) {
      Samples test = d.kind == DatasetKind::idx ? load_idx_dataset(d.test_images, d.test_labels)
                                                : load_csv_dataset(d.test_csv);
      out.source = std::make_unique<PooledSource>(std::move(train), std::move(test));
    } else {
      out.source = std::make_unique<PooledSource>(
          PooledSource::holdout(std::move(train), d.test_per_class, test_seed));
    }
  }
  out.test = make_balanced_test_split(*out.source, K, d.test_per_class, test_seed);
  return out;
}

}  // namespace

SeedRun run_single_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  SeedRun run;
  run.seed = seed;
  run.derived = derive_seeds(seed);
  PreparedData data = prepare_data(spec, run.derived.stream);

  StreamConfig sc = spec.stream;
  sc.seed = run.derived.stream;
  StreamSet streams = build_stream(*data.source, sc);

  ModelConfig mc = spec.model;
  mc.input_dim = data.source->dim();
  mc.num_classes_max = sc.num_classes;
  TrainConfig tc = spec.train;
  tc.seed = run.derived.training;
  run.result = run_experiment(streams, data.test, mc, run.derived.model, tc);
  return run;
}

std::vector<SeedRun> run_seeds(const ExperimentSpec& spec, std::size_t workers,
                               const ProgressFn& progress) {
  const std::size_t n = spec.seeds.size();
  std::vector<SeedRun> runs(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        runs[i] = run_single_seed(spec, spec.seeds[i]);
        if (progress) {
          std::lock_guard lock(log_mutex);
          char line[160];
          std::snprintf(line, sizeof line, "seed %llu: A_T=%.4f (%.1fs)",
                        static_cast<unsigned long long>(spec.seeds[i]),
                        runs[i].result.average_accuracy, runs[i].result.wall_seconds);
          progress(line);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(workers, 1, n);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return runs;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

fs::path seed_dir(const fs::path& out, std::uint64_t seed) {
  return out / ("seed_" + std::to_string(seed));
}

json result_json(const SeedRun& run) {
  const ExperimentResult& r = run.result;
  json acc = json::array();
  for (std::size_t i = 0; i < r.accuracy.tasks(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j <= i; ++j) row.push_back(r.accuracy.at(i, j));
    acc.push_back(row);
  }
  std::vector<std::size_t> hist(r.class_counts.size(), 0);
  for (const auto& s : r.final_buffer)
    if (s.label < hist.size()) ++hist[s.label];
  const RunMetrics m = metrics_of(run);
  return {{"seed", run.seed},
          {"derived_seeds",
           {{"stream", run.derived.stream}, {"model", run.derived.model}, {"training", run.derived.training}}},
          {"average_accuracy", m.average_accuracy},
          {"forgetting", opt(m.forgetting)},
          {"head", opt(m.head)},
          {"median", opt(m.median)},
          {"tail", opt(m.tail)},
          {"groups",
           {{"head", r.final_breakdown.groups.head},
            {"median", r.final_breakdown.groups.median},
            {"tail", r.final_breakdown.groups.tail}}},
          {"accuracy_matrix", acc},
          {"class_counts", r.class_counts},
          {"buffer_histogram", hist},
          {"steps", r.steps},
          {"consumed_samples", r.consumed_samples},
          {"total_samples", r.total_samples},
          {"wall_seconds", r.wall_seconds}};
}

}  // namespace

RunSummary write_run_artifacts(const ExperimentSpec& spec, const std::string& verb,
                               const std::vector<SeedRun>& runs, const std::string& label,
                               const json& parameters) {
  fs::create_directories(spec.out);
  json derived = json::array();
  for (const auto& r : runs)
    derived.push_back({{"seed", r.seed},
                       {"stream", r.derived.stream},
                       {"model", r.derived.model},
                       {"training", r.derived.training}});
  write_json(spec.out / "run.json",
             {{"verb", verb}, {"label", label}, {"spec", spec_to_json(spec)}, {"derived_seeds", derived}});

  for (const auto& run : runs) {
    const fs::path dir = seed_dir(spec.out, run.seed);
    fs::create_directories(dir);
    const ExperimentResult& r = run.result;
    write_accuracy_csv(dir / "accuracy_matrix.csv", r.accuracy);
    for (std::size_t t = 0; t < r.confusions.size(); ++t) {
      const std::string stem = "confusion_" + std::to_string(t + 1);
      write_confusion_csv(dir / (stem + ".csv"), r.confusions[t]);
      write_normalized_confusion_csv(dir / (stem + "_normalized.csv"), r.confusions[t]);
    }
    write_loss_log_csv(dir / "loss_log.csv", r.loss_log);
    write_json(dir / "result.json", result_json(run));
  }

  RunSummary summary = summarize_runs(label, parameters, runs);
  write_json(spec.out / "summary.json", summary_to_json({verb, {summary}}));
  return summary;
}

SummaryFile run_verb(const ExperimentSpec& spec, std::size_t workers, const ProgressFn& progress) {
  spec.validate();
  const auto runs = run_seeds(spec, workers, progress);
  return {"run", {write_run_artifacts(spec, "run", runs, "run", json::object())}};
}

namespace {

std::string compact(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::vector<std::string> stat_cells(const Statistic& s) {
  return {format_number(s.mean), format_number(s.std)};
}

}  // namespace

SummaryFile sweep_imbalance(const ExperimentSpec& spec, const std::vector<double>& rhos,
                            std::size_t workers, const ProgressFn& progress) {
  if (rhos.empty()) throw ConfigError("rhos", "at least one imbalance ratio is required");
  spec.validate();
  SummaryFile file{"sweep-imbalance", {}};
  Table table{{"rho", "mean_accuracy", "std_accuracy", "mean_forgetting", "std_forgetting",
               "mean_tail", "std_tail"},
              {}};
  for (double rho : rhos) {
    ExperimentSpec point = spec;
    point.stream.rho = rho;
    point.out = spec.out / ("rho_" + compact(rho));
    point.validate();
    if (progress) progress("rho = " + compact(rho));
    const auto runs = run_seeds(point, workers, progress);
    RunSummary s = write_run_artifacts(point, "sweep-imbalance", runs, "rho=" + compact(rho),
                                       {{"rho", rho}});
    std::vector<std::string> row{format_number(rho)};
    for (const Statistic* st : {&s.average_accuracy, &s.forgetting, &s.tail})
      for (auto& c : stat_cells(*st)) row.push_back(c);
    table.rows.push_back(row);
    file.points.push_back(std::move(s));
  }
  write_table(spec.out / "sweep_imbalance.csv", table);
  write_json(spec.out / "summary.json", summary_to_json(file));
  return file;
}

SummaryFile sweep_pairing(const ExperimentSpec& spec, const std::vector<std::size_t>& ms,
                          std::size_t workers, const ProgressFn& progress) {
  if (ms.empty()) throw ConfigError("ms", "at least one pairing value is required");
  spec.validate();
  SummaryFile file{"sweep-pairing", {}};
  Table table{{"m", "mean_accuracy", "std_accuracy", "mean_forgetting", "std_forgetting",
               "mean_wall_seconds", "std_wall_seconds"},
              {}};
  for (std::size_t m : ms) {
    ExperimentSpec point = spec;
    point.train.pairing.exemplars_per_input = m;
    point.out = spec.out / ("m_" + std::to_string(m));
    point.validate();
    if (progress) progress("m = " + std::to_string(m));
    const auto runs = run_seeds(point, workers, progress);
    RunSummary s = write_run_artifacts(point, "sweep-pairing", runs, "m=" + std::to_string(m),
                                       {{"pairing", m}});
    std::vector<std::string> row{std::to_string(m)};
    for (const Statistic* st : {&s.average_accuracy, &s.forgetting, &s.wall_seconds})
      for (auto& c : stat_cells(*st)) row.push_back(c);
    table.rows.push_back(row);
    file.points.push_back(std::move(s));
  }
  write_table(spec.out / "sweep_pairing.csv", table);
  write_json(spec.out / "summary.json", summary_to_json(file));
  return file;
}

SummaryFile compare_losses(const ExperimentSpec& spec, std::size_t workers,
                           const ProgressFn& progress) {
  spec.validate();
  SummaryFile file{"compare-losses", {}};
  Table table{{"arm", "mean_accuracy", "std_accuracy", "mean_forgetting", "std_forgetting",
               "mean_head", "std_head", "mean_tail", "std_tail"},
              {}};
  const std::pair<HeadLoss, const char*> arms[] = {{HeadLoss::cross_entropy, "contrastive+CE"},
                                                   {HeadLoss::equalization, "contrastive+EQ"}};
  for (const auto& [loss, label] : arms) {
    ExperimentSpec point = spec;
    point.train.method = Method::delta;
    point.train.stage2_loss = loss;
    point.out = spec.out / (loss == HeadLoss::equalization ? "stage2_eq" : "stage2_ce");
    point.validate();
    if (progress) progress(label);
    const auto runs = run_seeds(point, workers, progress);
    RunSummary s = write_run_artifacts(point, "compare-losses", runs, label,
                                       {{"stage2_loss", to_string(loss)}});
    std::vector<std::string> row{label};
    for (const Statistic* st : {&s.average_accuracy, &s.forgetting, &s.head, &s.tail})
      for (auto& c : stat_cells(*st)) row.push_back(c);
    table.rows.push_back(row);
    file.points.push_back(std::move(s));
  }
  write_table(spec.out / "compare_losses.csv", table);
  write_json(spec.out / "summary.json", summary_to_json(file));
  return file;
}

SummaryFile inspect_buffer(const ExperimentSpec& spec, const ProgressFn& progress) {
  spec.validate();
  ExperimentSpec single = spec;
  single.seeds = {spec.seeds.front()};
  const auto runs = run_seeds(single, 1, progress);
  const SeedRun& run = runs.front();
  RunSummary s = write_run_artifacts(single, "inspect-buffer", runs, "buffer",
                                     {{"buffer_size", spec.train.buffer_capacity}});

  write_csv_dataset(spec.out / "buffer.csv", run.result.final_buffer);
  const auto& counts = run.result.class_counts;
  std::vector<std::size_t> stored(counts.size(), 0);
  for (const auto& x : run.result.final_buffer)
    if (x.label < stored.size()) ++stored[x.label];
  Table table{{"class", "stored", "train_count"}, {}};
  for (std::size_t c = 0; c < counts.size(); ++c)
    table.rows.push_back({std::to_string(c), std::to_string(stored[c]), std::to_string(counts[c])});
  write_table(spec.out / "buffer_histogram.csv", table);

  SummaryFile file{"inspect-buffer", {std::move(s)}};
  write_json(spec.out / "summary.json", summary_to_json(file));
  return file;
}

// ---------------------------------------------------------------------------
// Tables and files

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw FormatError("missing column '" + name + "'", 0);
  return static_cast<std::size_t>(it - header.begin());
}

double Table::number(std::size_t row, const std::string& name) const {
  const std::string& cell = rows.at(row).at(column(name));
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used == cell.size()) return v;
  } catch (const std::exception&) {
  }
  throw FormatError("column '" + name + "' row " + std::to_string(row) + ": not a number", row + 1);
}

std::string format_number(std::optional<double> v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

void write_table(const fs::path& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of(",\n") != std::string::npos)
        throw Error("table cell contains a separator: " + cells[i]);
      out << (i ? "," : "") << cells[i];
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) throw Error("table row width does not match header");
    line(r);
  }
}

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Table t;
  std::string line;
  std::size_t offset = 0;
  bool first = true;
  while (std::getline(in, line)) {
    const std::size_t start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size())
      throw FormatError(path.filename().string() + ": row has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(t.header.size()),
                        start);
    t.rows.push_back(std::move(cells));
  }
  if (first) throw FormatError(path.filename().string() + ": empty table", 0);
  return t;
}

void write_accuracy_csv(const fs::path& path, const AccuracyMatrix& mat) {
  Table t{{"after_task", "task", "accuracy"}, {}};
  for (std::size_t i = 0; i < mat.tasks(); ++i)
    for (std::size_t j = 0; j <= i; ++j)
      if (mat.filled(i, j))
        t.rows.push_back({std::to_string(i + 1), std::to_string(j + 1), format_number(mat.at(i, j))});
  write_table(path, t);
}

AccuracyMatrix read_accuracy_csv(const fs::path& path) {
  const Table t = read_table(path);
  std::size_t T = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    T = std::max(T, static_cast<std::size_t>(t.number(r, "after_task")));
  AccuracyMatrix mat(T);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto i = static_cast<std::size_t>(t.number(r, "after_task"));
    const auto j = static_cast<std::size_t>(t.number(r, "task"));
    if (i == 0 || j == 0 || j > i) throw FormatError(path.filename().string() + ": bad task index", r + 1);
    mat.set(i - 1, j - 1, t.number(r, "accuracy"));
  }
  return mat;
}

namespace {

std::vector<std::string> confusion_header(const ConfusionMatrix& conf) {
  std::vector<std::string> h{"true"};
  for (std::size_t c : conf.classes) h.push_back("pred_" + std::to_string(c));
  return h;
}

std::vector<std::size_t> classes_from_header(const Table& t, const fs::path& path) {
  std::vector<std::size_t> classes;
  for (std::size_t i = 1; i < t.header.size(); ++i) {
    const std::string& h = t.header[i];
    if (h.rfind("pred_", 0) != 0) throw FormatError(path.filename().string() + ": bad header " + h, 0);
    classes.push_back(parse_number<std::size_t>(h.substr(5), "header"));
  }
  return classes;
}

}  // namespace

void write_confusion_csv(const fs::path& path, const ConfusionMatrix& conf) {
  Table t{confusion_header(conf), {}};
  for (std::size_t i = 0; i < conf.classes.size(); ++i) {
    std::vector<std::string> row{std::to_string(conf.classes[i])};
    for (auto n : conf.counts[i]) row.push_back(std::to_string(n));
    t.rows.push_back(row);
  }
  write_table(path, t);
}

void write_normalized_confusion_csv(const fs::path& path, const ConfusionMatrix& conf) {
  Table t{confusion_header(conf), {}};
  const auto norm = conf.normalized();
  for (std::size_t i = 0; i < conf.classes.size(); ++i) {
    std::vector<std::string> row{std::to_string(conf.classes[i])};
    for (double v : norm[i]) row.push_back(format_number(v));
    t.rows.push_back(row);
  }
  write_table(path, t);
}

ConfusionMatrix read_confusion_csv(const fs::path& path) {
  const Table t = read_table(path);
  ConfusionMatrix conf(classes_from_header(t, path));
  if (t.rows.size() != conf.classes.size())
    throw FormatError(path.filename().string() + ": confusion matrix is not square", 0);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (parse_number<std::size_t>(t.rows[i][0], "true") != conf.classes[i])
      throw FormatError(path.filename().string() + ": row labels out of order", i + 1);
    for (std::size_t j = 0; j < conf.classes.size(); ++j)
      conf.counts[i][j] = parse_number<std::uint64_t>(t.rows[i][j + 1], "count");
  }
  return conf;
}

std::vector<std::vector<double>> read_normalized_confusion_csv(const fs::path& path) {
  const Table t = read_table(path);
  const auto classes = classes_from_header(t, path);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < classes.size(); ++j) row.push_back(t.number(i, t.header[j + 1]));
    out.push_back(row);
  }
  return out;
}

void write_loss_log_csv(const fs::path& path, const std::vector<StepRecord>& log) {
  Table t{{"step", "task", "stream_samples", "exemplars", "combined_size", "stage1_loss",
           "stage2_loss"},
          {}};
  for (const auto& r : log)
    t.rows.push_back({std::to_string(r.step), std::to_string(r.task + 1),
                      std::to_string(r.stream_samples), std::to_string(r.exemplars),
                      std::to_string(r.combined_size), format_number(r.stage1_loss),
                      format_number(r.stage2_loss)});
  write_table(path, t);
}

std::vector<StepRecord> read_loss_log_csv(const fs::path& path) {
  const Table t = read_table(path);
  std::vector<StepRecord> out;
  auto count = [&](std::size_t r, const char* name) {
    return parse_number<std::size_t>(t.rows[r][t.column(name)], name);
  };
  auto optional_number = [&](std::size_t r, const char* name) -> std::optional<double> {
    if (t.rows[r][t.column(name)].empty()) return std::nullopt;
    return t.number(r, name);
  };
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    StepRecord rec;
    rec.step = count(r, "step");
    const std::size_t task = count(r, "task");
    if (task == 0) throw FormatError(path.filename().string() + ": task numbers start at 1", r + 1);
    rec.task = task - 1;
    rec.stream_samples = count(r, "stream_samples");
    rec.exemplars = count(r, "exemplars");
    rec.combined_size = count(r, "combined_size");
    rec.stage1_loss = optional_number(r, "stage1_loss");
    rec.stage2_loss = optional_number(r, "stage2_loss");
    out.push_back(rec);
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.filename().string() + ": " + e.what(), e.byte);
  }
}

SummaryFile read_summary(const fs::path& path) { return summary_from_json(read_json(path)); }

ExperimentSpec read_run_spec(const fs::path& run_json) {
  const json j = read_json(run_json);
  if (!j.contains("spec")) throw FormatError(run_json.filename().string() + ": no spec", 0);
  return spec_from_json(j.at("spec"));
}

}  // namespace delta
