#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "delta/buffer.hpp"
#include "delta/error.hpp"
#include "test_support.hpp"

using namespace delta;
using delta::testing::sample;

namespace {

Samples numbered(std::size_t n, std::size_t offset = 0) {
  Samples out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(sample((offset + i) % 5, {static_cast<double>(offset + i)}));
  return out;
}

// Upper 1% quantile of chi-square with 9 degrees of freedom.
constexpr double kChiSquare9At001 = 21.666;

}  // namespace

TEST_CASE("reservoir_update") {
  SUBCASE("fill phase stores everything") {
    ReplayBuffer buf(10, 1);
    const Samples s = numbered(10);
    buf.reservoir_update(s);
    CHECK(buf.slots() == s);
    CHECK(buf.seen_count() == 10);
  }
  SUBCASE("empty batch is a no-op") {
    ReplayBuffer buf(4, 1);
    buf.reservoir_update(numbered(3));
    const auto before = buf.content_hash();
    buf.reservoir_update(Samples{});
    CHECK(buf.content_hash() == before);
  }
  SUBCASE("capacity is never exceeded") {
    ReplayBuffer buf(7, 3);
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> len(0, 12);
    std::size_t offered = 0;
    for (int i = 0; i < 50; ++i) {
      const std::size_t n = len(rng);
      buf.reservoir_update(numbered(n, offered));
      offered += n;
      CHECK(buf.size() <= 7);
      CHECK(buf.size() == std::min<std::size_t>(7, offered));
      CHECK(buf.seen_count() == offered);
    }
  }
  SUBCASE("two slots, three items: inclusion probability 2/3") {
    const Samples s = numbered(3);
    std::array<int, 3> hits{};
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
      ReplayBuffer buf(2, static_cast<std::uint64_t>(t));
      buf.reservoir_update(s);
      for (const auto& x : buf.slots()) ++hits[static_cast<std::size_t>(x.features[0])];
    }
    for (int h : hits) CHECK(std::abs(h / double(trials) - 2.0 / 3.0) <= 0.02);
  }
  SUBCASE("zero capacity is a configuration error") {
    try {
      ReplayBuffer buf(0, 1);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "buffer_size");
    }
  }
}

TEST_CASE("random_retrieve") {
  ReplayBuffer empty(5, 1);
  CHECK(empty.random_retrieve(3).empty());

  ReplayBuffer buf(10, 2);
  buf.reservoir_update(numbered(10));
  const auto hash = buf.content_hash();

  SUBCASE("clamps to occupancy and draws without replacement") {
    const Samples all = buf.random_retrieve(25);
    CHECK(all.size() == 10);
    std::set<double> ids;
    for (const auto& s : all) ids.insert(s.features[0]);
    CHECK(ids.size() == 10);
    CHECK(buf.content_hash() == hash);
  }
  SUBCASE("slot selection frequencies pass a chi-square test") {
    std::array<double, 10> freq{};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++freq[static_cast<std::size_t>(buf.random_retrieve(1)[0].features[0])];
    const double expected = draws / 10.0;
    double chi2 = 0.0;
    for (double f : freq) chi2 += (f - expected) * (f - expected) / expected;
    CHECK(chi2 < kChiSquare9At001);
    CHECK(buf.content_hash() == hash);
  }
}

TEST_CASE("pair_exemplars") {
  ReplayBuffer buf(200, 5);
  const Samples batch = numbered(16);

  SUBCASE("m=1 with a full buffer") {
    buf.reservoir_update(numbered(200));
    CHECK(pair_exemplars(batch, buf, {1}).size() == 16);
  }
  SUBCASE("m=0 disables pairing") {
    buf.reservoir_update(numbered(200));
    CHECK(pair_exemplars(batch, buf, {0}).empty());
  }
  SUBCASE("m=10 clamps to occupancy") {
    buf.reservoir_update(numbered(40));
    CHECK(pair_exemplars(batch, buf, {10}).size() == 40);
  }
}

TEST_CASE("compose_combined_batch") {
  Augmenter aug({0.1, 0.1, 6});
  const Samples x = numbered(16);
  const Samples b = numbered(16, 100);

  SUBCASE("layout and provenance") {
    const CombinedBatch g = compose_combined_batch(x, b, aug);
    REQUIRE(g.size() == 64);
    CHECK(g.count(Origin::stream, false) == 16);
    CHECK(g.count(Origin::stream, true) == 16);
    CHECK(g.count(Origin::buffer, false) == 16);
    CHECK(g.count(Origin::buffer, true) == 16);
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(g.samples[i] == x[i]);
      CHECK(g.samples[32 + i] == b[i]);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& p = g.provenance[i];
      const auto& q = g.provenance[p.partner];
      CHECK(q.partner == i);
      CHECK(q.origin == p.origin);
      CHECK(q.augmented != p.augmented);
      CHECK(g.samples[p.partner].label == g.samples[i].label);
    }
  }
  SUBCASE("empty exemplar set") {
    const CombinedBatch g = compose_combined_batch(x, Samples{}, aug);
    CHECK(g.size() == 32);
    CHECK(g.count(Origin::buffer, false) == 0);
  }
}

TEST_CASE("buffer snapshot round-trips through CSV") {
  ReplayBuffer buf(6, 8);
  buf.reservoir_update(numbered(20));
  const auto path = std::filesystem::temp_directory_path() / "delta_buffer_snapshot.csv";
  write_buffer_snapshot(path, buf);
  CHECK(load_csv_dataset(path) == buf.slots());

  std::map<std::size_t, std::size_t> expected;
  for (const auto& s : buf.slots()) ++expected[s.label];
  const auto hist = buf.class_histogram();
  for (const auto& [label, n] : expected) CHECK(hist.at(label) == n);
}
