#include "delta/stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "delta/error.hpp"

namespace delta {

Matrix feature_matrix(std::span<const LabeledVector> samples) {
  if (samples.empty()) return Matrix();
  const std::size_t dim = samples.front().features.size();
  std::vector<double> data;
  data.reserve(samples.size() * dim);
  for (const auto& s : samples) {
    if (s.features.size() != dim) {
      throw DimensionError("feature_matrix: sample of dim " + std::to_string(s.features.size()) +
                           " in a batch of dim " + std::to_string(dim));
    }
    data.insert(data.end(), s.features.begin(), s.features.end());
  }
  return Matrix(samples.size(), dim, std::move(data));
}

std::vector<std::size_t> labels_of(std::span<const LabeledVector> samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Sources

SyntheticSource::SyntheticSource(std::size_t num_classes, std::size_t dim, double cluster_spread,
                                 std::uint64_t seed)
    : dim_(dim), spread_(cluster_spread), seed_(seed) {
  if (num_classes == 0) throw ConfigError("num_classes", "must be at least 1");
  if (dim == 0) throw ConfigError("dim", "must be at least 1");
  if (!(cluster_spread >= 0.0)) throw ConfigError("cluster_spread", "must be non-negative");
  std::mt19937_64 rng(mix_seed(seed, 0x6d65616e73ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  means_.resize(num_classes);
  for (auto& m : means_) {
    double sq = 0.0;
    do {
      m.assign(dim, 0.0);
      sq = 0.0;
      for (double& v : m) {
        v = normal(rng);
        sq += v * v;
      }
    } while (sq == 0.0);
    const double norm = std::sqrt(sq);
    for (double& v : m) v /= norm;
  }
}

Samples SyntheticSource::draw(std::size_t cls, std::size_t n, Partition part,
                              std::uint64_t seed) const {
  if (cls >= means_.size()) throw DataError("class " + std::to_string(cls) + " out of range");
  const std::uint64_t stream = mix_seed(mix_seed(seed_, seed),
                                        cls * 2 + (part == Partition::test ? 1 : 0));
  std::mt19937_64 rng(stream);
  std::normal_distribution<double> normal(0.0, 1.0);
  Samples out(n);
  for (auto& s : out) {
    s.label = cls;
    s.features = means_[cls];
    if (spread_ > 0.0)
      for (double& v : s.features) v += spread_ * normal(rng);
  }
  return out;
}

std::unique_ptr<SyntheticSource> make_synthetic_source(std::size_t num_classes, std::size_t dim,
                                                       double cluster_spread, std::uint64_t seed) {
  return std::make_unique<SyntheticSource>(num_classes, dim, cluster_spread, seed);
}

namespace {

std::vector<Samples> group_by_class(Samples all, std::size_t& dim) {
  std::vector<Samples> groups;
  for (auto& s : all) {
    if (dim == 0) dim = s.features.size();
    if (s.features.size() != dim) throw DataError("samples of mixed dimension in pool");
    if (s.label >= groups.size()) groups.resize(s.label + 1);
    groups[s.label].push_back(std::move(s));
  }
  return groups;
}

}  // namespace

PooledSource::PooledSource(Samples train, Samples test) {
  train_ = group_by_class(std::move(train), dim_);
  test_ = group_by_class(std::move(test), dim_);
  const std::size_t k = std::max(train_.size(), test_.size());
  train_.resize(k);
  test_.resize(k);
}

PooledSource PooledSource::holdout(Samples all, std::size_t test_per_class, std::uint64_t seed) {
  std::size_t dim = 0;
  auto groups = group_by_class(std::move(all), dim);
  Samples train;
  Samples test;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto& g = groups[c];
    std::mt19937_64 rng(mix_seed(seed, c));
    std::shuffle(g.begin(), g.end(), rng);
    const std::size_t held = std::min(test_per_class, g.size());
    test.insert(test.end(), g.end() - static_cast<std::ptrdiff_t>(held), g.end());
    train.insert(train.end(), g.begin(), g.end() - static_cast<std::ptrdiff_t>(held));
  }
  return PooledSource(std::move(train), std::move(test));
}

std::size_t PooledSource::available(std::size_t cls, Partition part) const {
  const auto& pools = part == Partition::train ? train_ : test_;
  return cls < pools.size() ? pools[cls].size() : 0;
}

Samples PooledSource::draw(std::size_t cls, std::size_t n, Partition part,
                           std::uint64_t seed) const {
  const auto& pools = part == Partition::train ? train_ : test_;
  const std::size_t have = available(cls, part);
  if (n > have) {
    throw DataError("class " + std::to_string(cls) + ": requested " + std::to_string(n) + " " +
                    (part == Partition::train ? "training" : "test") + " samples but only " +
                    std::to_string(have) + " available");
  }
  std::vector<std::size_t> order(have);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, cls));
  std::shuffle(order.begin(), order.end(), rng);
  Samples out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pools[cls][order[i]]);
  return out;
}

// ---------------------------------------------------------------------------
// Stream construction

void StreamConfig::validate() const {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho", "must lie in (0, 1]");
  if (num_classes == 0) throw ConfigError("num_classes", "must be at least 1");
  if (max_per_class == 0) throw ConfigError("max_per_class", "must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size", "must be at least 1");
  if (classes_per_task.empty()) throw ConfigError("classes_per_task", "needs at least one task");
  for (std::size_t c : classes_per_task)
    if (c == 0) throw ConfigError("classes_per_task", "every task needs at least one class");
  const std::size_t total =
      std::accumulate(classes_per_task.begin(), classes_per_task.end(), std::size_t{0});
  if (total != num_classes) {
    throw ConfigError("classes_per_task", "sums to " + std::to_string(total) + " but there are " +
                                              std::to_string(num_classes) + " classes");
  }
}

std::vector<std::size_t> long_tail_counts(double rho, std::size_t num_classes,
                                          std::size_t max_per_class) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho", "must lie in (0, 1]");
  if (num_classes == 0) throw ConfigError("num_classes", "must be at least 1");
  if (max_per_class == 0) throw ConfigError("max_per_class", "must be at least 1");
  if (num_classes == 1) return {max_per_class};
  std::vector<std::size_t> counts(num_classes);
  const double denom = static_cast<double>(num_classes - 1);
  for (std::size_t j = 0; j < num_classes; ++j) {
    const double raw =
        static_cast<double>(max_per_class) * std::pow(rho, static_cast<double>(j) / denom);
    counts[j] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(raw)));
  }
  return counts;
}

TaskStream::TaskStream(std::size_t task_id, std::vector<std::size_t> class_ids,
                       std::vector<Batch> batches)
    : task_id_(task_id), class_ids_(std::move(class_ids)), batches_(std::move(batches)) {
  batch_count_ = batches_.size();
  for (const auto& b : batches_) sample_count_ += b.samples.size();
}

std::vector<Batch> TaskStream::consume() {
  if (consumed_) {
    throw SinglePassError("task " + std::to_string(task_id_) + " stream was already consumed");
  }
  consumed_ = true;
  return std::move(batches_);
}

StreamSet build_stream(const SampleSource& source, const StreamConfig& cfg) {
  cfg.validate();
  if (cfg.num_classes > source.num_classes()) {
    throw DataError("stream needs " + std::to_string(cfg.num_classes) +
                    " classes but the source provides " + std::to_string(source.num_classes()));
  }
  const auto counts = long_tail_counts(cfg.rho, cfg.num_classes, cfg.max_per_class);

  // order[rank] = class id receiving the rank-th largest count.
  std::vector<std::size_t> order(cfg.num_classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (cfg.shuffle_classes) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x636c6173ULL));
    std::shuffle(order.begin(), order.end(), rng);
  }

  StreamSet out;
  out.class_counts.assign(cfg.num_classes, 0);
  std::size_t rank = 0;
  for (std::size_t t = 0; t < cfg.num_tasks(); ++t) {
    std::vector<std::size_t> class_ids;
    Samples pool;
    for (std::size_t i = 0; i < cfg.classes_per_task[t]; ++i, ++rank) {
      const std::size_t cls = order[rank];
      class_ids.push_back(cls);
      auto drawn = source.draw(cls, counts[rank], Partition::train, cfg.seed);
      out.class_counts[cls] = drawn.size();
      pool.insert(pool.end(), std::make_move_iterator(drawn.begin()),
                  std::make_move_iterator(drawn.end()));
    }
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x7461736bULL + t));
    std::shuffle(pool.begin(), pool.end(), rng);

    std::vector<Batch> batches;
    for (std::size_t start = 0, idx = 0; start < pool.size(); start += cfg.batch_size, ++idx) {
      const std::size_t stop = std::min(pool.size(), start + cfg.batch_size);
      Batch b;
      b.task_id = t;
      b.index = idx;
      b.samples.assign(std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(start)),
                       std::make_move_iterator(pool.begin() + static_cast<std::ptrdiff_t>(stop)));
      batches.push_back(std::move(b));
    }
    out.total_samples += pool.size();
    out.tasks.emplace_back(t, std::move(class_ids), std::move(batches));
  }
  return out;
}

Samples make_balanced_test_split(const SampleSource& source, std::size_t num_classes,
                                 std::size_t per_class, std::uint64_t seed) {
  Samples out;
  out.reserve(num_classes * per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto drawn = source.draw(c, per_class, Partition::test, seed);
    out.insert(out.end(), std::make_move_iterator(drawn.begin()),
               std::make_move_iterator(drawn.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentConfig::validate() const {
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma", "must be non-negative");
  if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw ConfigError("mask_prob", "must lie in [0, 1)");
}

Augmenter::Augmenter(AugmentConfig cfg) : cfg_(cfg), rng_(mix_seed(cfg.seed, 0x617567ULL)) {
  cfg_.validate();
}

Samples Augmenter::operator()(std::span<const LabeledVector> batch) {
  Samples out(batch.begin(), batch.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution mask(cfg_.mask_prob);
  for (auto& s : out) {
    if (cfg_.noise_sigma > 0.0)
      for (double& v : s.features) v += cfg_.noise_sigma * noise(rng_);
    if (cfg_.mask_prob > 0.0)
      for (double& v : s.features)
        if (mask(rng_)) v = 0.0;
  }
  return out;
}

Samples augment(std::span<const LabeledVector> batch, Augmenter& augmenter) {
  return augmenter(batch);
}

// ---------------------------------------------------------------------------
// File ingestion

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<unsigned char> read_all_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& what) {
  if (offset + 4 > bytes.size()) throw FormatError(what + ": truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Samples load_idx_dataset(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  const auto images = read_all_bytes(images_path);
  const auto labels = read_all_bytes(labels_path);
  const std::string img_name = images_path.filename().string();
  const std::string lbl_name = labels_path.filename().string();

  if (read_be32(images, 0, img_name) != kIdxImagesMagic)
    throw FormatError(img_name + ": bad magic number, expected 0x00000803", 0);
  if (read_be32(labels, 0, lbl_name) != kIdxLabelsMagic)
    throw FormatError(lbl_name + ": bad magic number, expected 0x00000801", 0);

  const std::size_t count = read_be32(images, 4, img_name);
  const std::size_t rows = read_be32(images, 8, img_name);
  const std::size_t cols = read_be32(images, 12, img_name);
  const std::size_t label_count = read_be32(labels, 4, lbl_name);
  if (label_count != count) {
    throw FormatError(lbl_name + ": holds " + std::to_string(label_count) + " labels but " +
                          img_name + " holds " + std::to_string(count) + " images",
                      4);
  }
  const std::size_t pixels = rows * cols;
  const std::size_t image_header = 16;
  const std::size_t label_header = 8;
  if (images.size() < image_header + count * pixels) {
    throw FormatError(img_name + ": truncated payload, expected " +
                          std::to_string(image_header + count * pixels) + " bytes",
                      images.size());
  }
  if (labels.size() < label_header + count) {
    throw FormatError(lbl_name + ": truncated payload, expected " +
                          std::to_string(label_header + count) + " bytes",
                      labels.size());
  }

  Samples out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = out[i];
    s.label = labels[label_header + i];
    s.features.resize(pixels);
    const unsigned char* px = images.data() + image_header + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) s.features[p] = static_cast<double>(px[p]) / 255.0;
  }
  return out;
}

Samples load_csv_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Samples out;
  std::string line;
  std::size_t offset = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    LabeledVector s;
    std::size_t field = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const char* first = line.data() + pos;
      const char* last = line.data() + comma;
      if (field == 0) {
        auto [ptr, ec] = std::from_chars(first, last, s.label);
        if (ec != std::errc() || ptr != last)
          throw FormatError(path.filename().string() + ": bad label", line_start + pos);
      } else {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last || !std::isfinite(v))
          throw FormatError(path.filename().string() + ": bad feature value", line_start + pos);
        s.features.push_back(v);
      }
      ++field;
      pos = comma + 1;
    }
    if (s.features.empty())
      throw FormatError(path.filename().string() + ": row without features", line_start);
    if (dim == 0) dim = s.features.size();
    if (s.features.size() != dim)
      throw FormatError(path.filename().string() + ": inconsistent feature count", line_start);
    out.push_back(std::move(s));
  }
  return out;
}

void write_csv_dataset(const std::filesystem::path& path, std::span<const LabeledVector> samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& s : samples) {
    out << s.label;
    for (double v : s.features) out << ',' << v;
    out << '\n';
  }
}

}  // namespace delta
