#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "delta/error.hpp"
#include "delta/eval.hpp"
#include "test_support.hpp"

using namespace delta;
using delta::testing::sample;

namespace {

AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.set(i, j, rows[i][j]);
  return m;
}

Samples balanced_test(std::size_t classes, std::size_t per_class) {
  Samples out;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) out.push_back(sample(c, {double(c), double(i)}));
  return out;
}

}  // namespace

TEST_CASE("AccuracyMatrix") {
  AccuracyMatrix m(3);
  CHECK_FALSE(m.filled(1, 0));
  m.set(1, 0, 0.5);
  CHECK(m.at(1, 0) == 0.5);
  CHECK(m.row_fill(1) == 1);
  CHECK_FALSE(m.row_complete(1));
  CHECK_THROWS(m.set(0, 1, 0.5));
  CHECK_THROWS(m.set(0, 0, 1.5));
  CHECK_THROWS((void)m.at(2, 2));
}

TEST_CASE("average_accuracy") {
  CHECK(average_accuracy(from_rows({{0.9}, {0.4, 0.6}}), 2) == 0.5);
  CHECK(average_accuracy(from_rows({{0.3}, {0.3, 0.3}, {0.3, 0.3, 0.3}}), 3) ==
        doctest::Approx(0.3).epsilon(1e-15));
  CHECK_THROWS(average_accuracy(from_rows({{0.9}, {0.4}}), 2));

  SUBCASE("only the final row matters") {
    AccuracyMatrix a = from_rows({{0.1}, {0.2, 0.3}, {0.7, 0.8, 0.9}});
    AccuracyMatrix b = from_rows({{0.9}, {0.6, 0.5}, {0.7, 0.8, 0.9}});
    CHECK(average_accuracy(a, 3) == average_accuracy(b, 3));
  }
}

TEST_CASE("average_forgetting") {
  CHECK(average_forgetting(from_rows({{0.8}, {0.5, 0.9}}), 2) == 0.8 - 0.5);
  CHECK(average_forgetting(from_rows({{0.5}, {0.6, 0.7}, {0.6, 0.7, 0.4}}), 3) == 0.0);
  // Accuracy that rises after the earlier peak yields negative forgetting.
  CHECK(average_forgetting(from_rows({{0.5}, {0.5, 0.5}, {0.75, 0.75, 0.5}}), 3) == -0.25);
  CHECK_THROWS(average_forgetting(from_rows({{0.8}}), 1));

  SUBCASE("matches direct recomputation on random matrices") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t T = 2 + static_cast<std::size_t>(trial % 6);
      std::vector<std::vector<double>> rows(T);
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j <= i; ++j) rows[i].push_back(u(rng));
      double sum = 0.0;
      for (std::size_t j = 0; j + 1 < T; ++j) {
        double best = 0.0;
        for (std::size_t i = j; i + 1 < T; ++i) best = std::max(best, rows[i][j]);
        sum += best - rows[T - 1][j];
      }
      const double got = average_forgetting(from_rows(rows), T);
      CHECK(std::abs(got - sum / double(T - 1)) < 1e-12);
      CHECK(got >= -1.0);
    }
  }
}

TEST_CASE("evaluate with a predictor") {
  const Samples test = balanced_test(4, 25);
  const std::vector<std::size_t> seen{0, 1, 2, 3};

  SUBCASE("oracle predictor") {
    const EvalResult r = evaluate([](const LabeledVector& s) { return s.label; }, test, seen);
    CHECK(r.accuracy == 1.0);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(r.confusion.counts[i][j] == (i == j ? 25u : 0u));
  }
  SUBCASE("uniform-random predictor stays within a binomial band") {
    const Samples big = balanced_test(4, 1000);
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> pick(0, 3);
    const EvalResult r = evaluate([&](const LabeledVector&) { return pick(rng); }, big, seen);
    const double sigma = std::sqrt(0.25 * 0.75 / 4000.0);
    CHECK(std::abs(r.accuracy - 0.25) <= 4.0 * sigma);
    for (auto s : r.confusion.row_sums()) CHECK(s == 1000u);
    CHECK(std::abs(r.accuracy - double(r.confusion.correct()) / double(r.confusion.total())) < 1e-12);
  }
  SUBCASE("normalized confusion rows sum to one") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<std::size_t> pick(0, 3);
    const EvalResult r = evaluate([&](const LabeledVector&) { return pick(rng); }, test, seen);
    for (const auto& row : r.confusion.normalized()) {
      double s = 0.0;
      for (double v : row) s += v;
      CHECK(s == doctest::Approx(1.0));
    }
  }
  SUBCASE("empty test set") {
    CHECK_THROWS_AS(evaluate([](const LabeledVector&) { return std::size_t{0}; }, Samples{}, seen), Error);
  }
}

TEST_CASE("predict_seen uses raw logits over seen columns") {
  const std::vector<double> logits{5.0, 1.0, 3.0, 3.0};
  CHECK(predict_seen(logits, {true, true, true, true}) == 0);
  CHECK(predict_seen(logits, {false, true, true, true}) == 2);
  CHECK(predict_seen(logits, {false, true, false, false}) == 1);
}

TEST_CASE("evaluate with a network") {
  ModelConfig cfg;
  cfg.input_dim = 2;
  cfg.hidden_dims = {4};
  cfg.embed_dim = 3;
  cfg.proj_dim = 3;
  cfg.num_classes_max = 5;
  const Network net(cfg, 1);
  const Samples test = balanced_test(3, 10);
  const std::vector<std::size_t> seen{0, 1, 2};
  const EvalResult r = evaluate(net, test, seen, 7);
  CHECK(r.confusion.total() == 30);
  CHECK(r.confusion.classes == seen);

  const Matrix logits = net.classify(net.encode(feature_matrix(test)));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto row = logits.row(i);
    const auto best = std::max_element(row.begin(), row.begin() + 3) - row.begin();
    if (static_cast<std::size_t>(best) == test[i].label) ++correct;
  }
  CHECK(r.accuracy == doctest::Approx(correct / 30.0).epsilon(1e-12));
}

TEST_CASE("headtail_breakdown") {
  ConfusionMatrix conf({0, 1, 2, 3, 4, 5});
  for (std::size_t c = 0; c < 6; ++c)
    for (int i = 0; i < 10; ++i) conf.add(c, c);

  SUBCASE("balanced counts split by class index") {
    const std::vector<std::size_t> counts(6, 50);
    const HeadTailAccuracy h = headtail_breakdown(conf, counts);
    CHECK(h.groups.head == std::vector<std::size_t>{0, 1});
    CHECK(h.groups.median == std::vector<std::size_t>{2, 3});
    CHECK(h.groups.tail == std::vector<std::size_t>{4, 5});
    CHECK(h.head == 1.0);
    CHECK(h.median == 1.0);
    CHECK(h.tail == 1.0);
  }
  SUBCASE("groups follow training counts") {
    const std::vector<std::size_t> counts{1, 100, 5, 50, 2, 20};
    const HeadTailAccuracy h = headtail_breakdown(conf, counts);
    CHECK(h.groups.head == std::vector<std::size_t>{1, 3});
    CHECK(h.groups.tail == std::vector<std::size_t>{4, 0});
  }
  SUBCASE("group sizes cover every seen class") {
    for (std::size_t n = 1; n <= 20; ++n) {
      std::vector<std::size_t> ids(n);
      for (std::size_t i = 0; i < n; ++i) ids[i] = i;
      const std::vector<std::size_t> counts(n, 3);
      const ClassGroups g = partition_by_frequency(ids, counts);
      CHECK(g.head.size() + g.median.size() + g.tail.size() == n);
      CHECK(g.head.size() == g.tail.size());
    }
  }
}
