#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "delta/error.hpp"
#include "delta/stream.hpp"
#include "test_support.hpp"

using namespace delta;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "delta_stream_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                      const std::vector<unsigned char>& pixels) {
  std::vector<unsigned char> out;
  put_be32(out, 0x00000803);
  put_be32(out, n);
  put_be32(out, rows);
  put_be32(out, cols);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> out;
  put_be32(out, 0x00000801);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

Samples all_samples(StreamSet& set) {
  Samples out;
  for (auto& task : set.tasks)
    for (auto& b : task.consume()) out.insert(out.end(), b.samples.begin(), b.samples.end());
  return out;
}

}  // namespace

TEST_CASE("long_tail_counts") {
  CHECK(long_tail_counts(1.0, 5, 100) == std::vector<std::size_t>{100, 100, 100, 100, 100});
  CHECK(long_tail_counts(0.5, 1, 40) == std::vector<std::size_t>{40});

  SUBCASE("three classes at rho 0.01 match direct evaluation") {
    std::vector<std::size_t> expected;
    for (int j = 0; j < 3; ++j)
      expected.push_back(static_cast<std::size_t>(std::llround(100.0 * std::pow(0.01, j / 2.0))));
    CHECK(expected == std::vector<std::size_t>{100, 10, 1});
    CHECK(long_tail_counts(0.01, 3, 100) == expected);
  }
  SUBCASE("CIFAR-100-LT endpoints") {
    const auto c = long_tail_counts(0.01, 100, 500);
    CHECK(c.front() == 500);
    CHECK(c.back() == 5);
    CHECK(c.front() / c.back() == 100);
  }
  SUBCASE("monotone, clamped, ratio close to 1/rho") {
    for (double rho : {0.005, 0.03, 0.07, 0.1, 0.5}) {
      for (std::size_t k : {2u, 7u, 20u, 100u}) {
        const auto c = long_tail_counts(rho, k, 1000);
        CHECK(std::is_sorted(c.rbegin(), c.rend()));
        CHECK(c.back() >= 1);
        const double ratio = static_cast<double>(c.front()) / static_cast<double>(c.back());
        CHECK(std::abs(ratio * rho - 1.0) < 0.2);
      }
    }
    CHECK(long_tail_counts(0.001, 4, 10).back() == 1);
  }
  SUBCASE("invalid configuration") {
    CHECK_THROWS_AS(long_tail_counts(0.0, 5, 10), ConfigError);
    CHECK_THROWS_AS(long_tail_counts(1.5, 5, 10), ConfigError);
    CHECK_THROWS_AS(long_tail_counts(0.5, 0, 10), ConfigError);
  }
}

TEST_CASE("synthetic source") {
  const auto src = make_synthetic_source(5, 8, 0.3, 42);
  SUBCASE("deterministic for a fixed seed") {
    const auto again = make_synthetic_source(5, 8, 0.3, 42);
    CHECK(src->draw(2, 10, Partition::train, 7) == again->draw(2, 10, Partition::train, 7));
    CHECK(src->draw(2, 10, Partition::train, 7) != src->draw(2, 10, Partition::train, 8));
    CHECK(src->draw(2, 10, Partition::train, 7) != src->draw(2, 10, Partition::test, 7));
  }
  SUBCASE("class means are unit norm") {
    for (std::size_t c = 0; c < 5; ++c) {
      double sq = 0.0;
      for (double v : src->mean(c)) sq += v * v;
      CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("zero spread returns the mean") {
    const auto flat = make_synthetic_source(3, 4, 0.0, 1);
    for (const auto& s : flat->draw(1, 5, Partition::train, 0)) {
      CHECK(s.label == 1);
      CHECK(std::equal(s.features.begin(), s.features.end(), flat->mean(1).begin()));
    }
  }
  SUBCASE("nearest-mean rule separates two tight clusters") {
    const auto two = make_synthetic_source(2, 8, 0.1, 5);
    std::size_t correct = 0;
    Samples all = two->draw(0, 500, Partition::train, 3);
    const Samples ones = two->draw(1, 500, Partition::train, 3);
    all.insert(all.end(), ones.begin(), ones.end());
    for (const auto& s : all) {
      double best = 1e300;
      std::size_t pick = 0;
      for (std::size_t c = 0; c < 2; ++c) {
        double d = 0.0;
        for (std::size_t i = 0; i < 8; ++i) d += std::pow(s.features[i] - two->mean(c)[i], 2);
        if (d < best) {
          best = d;
          pick = c;
        }
      }
      if (pick == s.label) ++correct;
    }
    CHECK(correct >= 990);
  }
}

TEST_CASE("build_stream") {
  const auto src = make_synthetic_source(4, 3, 0.5, 9);
  StreamConfig cfg;
  cfg.rho = 0.1;
  cfg.num_classes = 4;
  cfg.max_per_class = 40;
  cfg.classes_per_task = {2, 2};
  cfg.batch_size = 16;
  cfg.seed = 77;

  SUBCASE("classes are assigned to tasks in label order") {
    auto set = build_stream(*src, cfg);
    REQUIRE(set.tasks.size() == 2);
    CHECK(set.tasks[0].class_ids() == std::vector<std::size_t>{0, 1});
    CHECK(set.tasks[1].class_ids() == std::vector<std::size_t>{2, 3});
    for (auto& task : set.tasks) {
      const auto ids = task.class_ids();
      for (const auto& b : task.consume())
        for (const auto& s : b.samples)
          CHECK(std::find(ids.begin(), ids.end(), s.label) != ids.end());
    }
  }
  SUBCASE("chunking leaves a short final batch") {
    StreamConfig one = cfg;
    one.num_classes = 1;
    one.max_per_class = 33;
    one.classes_per_task = {1};
    auto set = build_stream(*src, one);
    std::vector<std::size_t> sizes;
    for (const auto& b : set.tasks[0].consume()) sizes.push_back(b.samples.size());
    CHECK(sizes == std::vector<std::size_t>{16, 16, 1});
  }
  SUBCASE("batches hold exactly the long-tailed subsample") {
    auto set = build_stream(*src, cfg);
    const auto counts = long_tail_counts(cfg.rho, 4, cfg.max_per_class);
    Samples expected;
    for (std::size_t c = 0; c < 4; ++c) {
      const auto drawn = src->draw(c, counts[c], Partition::train, cfg.seed);
      expected.insert(expected.end(), drawn.begin(), drawn.end());
    }
    Samples got = all_samples(set);
    std::sort(expected.begin(), expected.end());
    std::sort(got.begin(), got.end());
    CHECK(got == expected);
    CHECK(set.class_counts == counts);
    CHECK(set.total_samples == got.size());
  }
  SUBCASE("identical configuration gives identical streams") {
    auto a = build_stream(*src, cfg);
    auto b = build_stream(*src, cfg);
    CHECK(all_samples(a) == all_samples(b));
  }
  SUBCASE("a task stream is single-pass") {
    auto set = build_stream(*src, cfg);
    CHECK_FALSE(set.tasks[0].consumed());
    (void)set.tasks[0].consume();
    CHECK(set.tasks[0].consumed());
    CHECK_THROWS_AS(set.tasks[0].consume(), SinglePassError);
  }
  SUBCASE("shuffled class order keeps tasks disjoint") {
    StreamConfig shuffled = cfg;
    shuffled.shuffle_classes = true;
    auto set = build_stream(*src, shuffled);
    std::set<std::size_t> all;
    for (const auto& t : set.tasks)
      for (std::size_t c : t.class_ids()) CHECK(all.insert(c).second);
    CHECK(all.size() == 4);
  }
  SUBCASE("configuration errors") {
    StreamConfig bad = cfg;
    bad.classes_per_task = {3, 2};
    CHECK_THROWS_AS(build_stream(*src, bad), ConfigError);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(build_stream(*src, bad), ConfigError);
  }
  SUBCASE("insufficient pooled samples name the class") {
    Samples pool;
    for (std::size_t c = 0; c < 4; ++c)
      for (int i = 0; i < 5; ++i) pool.push_back(testing::sample(c, {double(c), double(i), 0.0}));
    PooledSource pooled(pool, {});
    try {
      (void)build_stream(pooled, cfg);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("class 0") != std::string::npos);
    }
  }
}

TEST_CASE("balanced test split") {
  const auto src = make_synthetic_source(4, 6, 0.2, 3);
  const Samples test = make_balanced_test_split(*src, 4, 50, 11);
  CHECK(test.size() == 200);
  std::map<std::size_t, int> hist;
  for (const auto& s : test) ++hist[s.label];
  for (std::size_t c = 0; c < 4; ++c) CHECK(hist[c] == 50);
  CHECK(make_balanced_test_split(*src, 4, 50, 11) == test);

  SUBCASE("pooled holdout never overlaps the training pool") {
    Samples pool;
    for (std::size_t c = 0; c < 3; ++c)
      for (int i = 0; i < 20; ++i) pool.push_back(testing::sample(c, {double(c), double(i)}));
    const PooledSource src2 = PooledSource::holdout(pool, 5, 1);
    Samples train;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(src2.available(c, Partition::train) == 15);
      const auto d = src2.draw(c, 15, Partition::train, 0);
      train.insert(train.end(), d.begin(), d.end());
    }
    const Samples held = make_balanced_test_split(src2, 3, 5, 0);
    for (const auto& s : held) CHECK(std::find(train.begin(), train.end(), s) == train.end());
  }
}

TEST_CASE("augment") {
  Samples batch;
  for (std::size_t i = 0; i < 4; ++i) batch.push_back(testing::sample(i % 2, {1.0, 2.0, 3.0}));

  SUBCASE("identity configuration") {
    Augmenter aug({0.0, 0.0, 1});
    CHECK(augment(batch, aug) == batch);
  }
  SUBCASE("labels are preserved and draws differ between calls") {
    Augmenter aug({0.1, 0.1, 1});
    const Samples a = aug(batch);
    const Samples b = aug(batch);
    CHECK(labels_of(a) == labels_of(batch));
    CHECK(a != b);
  }
  SUBCASE("masking rate stays within a binomial band") {
    Augmenter aug({0.0, 0.5, 4});
    const Samples one = {testing::sample(0, std::vector<double>(1000, 1.0))};
    const auto out = aug(one);
    const auto zeros = std::count(out[0].features.begin(), out[0].features.end(), 0.0);
    const double sigma = std::sqrt(1000 * 0.25);
    CHECK(std::abs(static_cast<double>(zeros) - 500.0) <= 4.0 * sigma);
  }
  SUBCASE("mask probability of one is rejected") {
    CHECK_THROWS_AS(Augmenter({0.1, 1.0, 0}), ConfigError);
  }
}

TEST_CASE("IDX ingestion") {
  const fs::path img = temp_path("images.idx3");
  const fs::path lbl = temp_path("labels.idx1");
  const std::vector<unsigned char> pixels = {0, 255, 51, 102, 10, 20, 30, 40, 255, 255, 0, 0};
  write_bytes(img, idx_images(3, 2, 2, pixels));
  write_bytes(lbl, idx_labels({0, 1, 0}));

  SUBCASE("small handcrafted file") {
    const Samples s = load_idx_dataset(img, lbl);
    REQUIRE(s.size() == 3);
    CHECK(labels_of(s) == std::vector<std::size_t>{0, 1, 0});
    for (const auto& x : s) CHECK(x.features.size() == 4);
    CHECK(s[0].features[1] == 1.0);
    CHECK(s[0].features[2] == doctest::Approx(0.2));
    CHECK(s[2].features[0] == 1.0);
  }
  SUBCASE("truncated payload") {
    auto bytes = idx_images(3, 2, 2, pixels);
    bytes.resize(bytes.size() - 3);
    write_bytes(img, bytes);
    try {
      (void)load_idx_dataset(img, lbl);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == bytes.size());
    }
  }
  SUBCASE("bad magic") {
    auto bytes = idx_images(3, 2, 2, pixels);
    bytes[3] = 0x02;
    write_bytes(img, bytes);
    CHECK_THROWS_AS(load_idx_dataset(img, lbl), FormatError);
  }
  SUBCASE("label count mismatch") {
    write_bytes(lbl, idx_labels({0, 1}));
    try {
      (void)load_idx_dataset(img, lbl);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 4);
    }
  }
}

TEST_CASE("CSV ingestion") {
  const fs::path path = temp_path("data.csv");
  std::mt19937_64 rng(8);
  Samples samples;
  for (std::size_t i = 0; i < 10; ++i) {
    const Matrix row = testing::random_matrix(1, 5, rng);
    samples.push_back(testing::sample(i % 3, {row.values().begin(), row.values().end()}));
  }
  write_csv_dataset(path, samples);
  CHECK(load_csv_dataset(path) == samples);

  {
    std::ofstream out(path);
    out << "0,1.0,2.0\n1,abc,2.0\n";
  }
  try {
    (void)load_csv_dataset(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 12);
  }
}
