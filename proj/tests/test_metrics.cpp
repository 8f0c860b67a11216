#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "embrank/errors.hpp"
#include "embrank/metrics.hpp"
#include "embrank/rng.hpp"

using namespace embrank;

namespace {

// O(n^2) brute-force oracle: count wins twice and ties once so the division
// uses the same integers as the rank formula.
double brute_force_auc(std::span<const double> scores, std::span<const int> labels) {
  std::uint64_t num = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1)
      ++n_pos;
    else
      ++n_neg;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j])
        num += 2;
      else if (scores[i] == scores[j])
        num += 1;
    }
  }
  return static_cast<double>(num) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

TEST_CASE("roc_auc basics") {
  const std::vector<double> s1 = {0.9, 0.1};
  const std::vector<int> l1 = {1, 0};
  CHECK(roc_auc(s1, l1) == 1.0);

  const std::vector<double> s2 = {0.4, 0.4, 0.4, 0.4};
  const std::vector<int> l2 = {1, 0, 1, 0};
  CHECK(roc_auc(s2, l2) == 0.5);

  const std::vector<double> s3 = {0.1, 0.9};
  CHECK(roc_auc(s3, l1) == 0.0);

  const std::vector<int> single = {1, 1};
  CHECK_THROWS_AS(roc_auc(s1, single), InvalidArgument);
  const std::vector<int> bad = {1, 2};
  CHECK_THROWS_AS(roc_auc(s1, bad), DataError);
}

TEST_CASE("roc_auc equals brute-force pair counting exactly, ties included") {
  Rng rng(808);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 1000;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse grid forces plenty of exact ties.
      scores[i] = static_cast<double>(rng.uniform_u64(25)) / 25.0;
      labels[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    CHECK(roc_auc(scores, labels) == brute_force_auc(scores, labels));
  }
}

TEST_CASE("roc_auc invariant under strictly increasing transforms") {
  Rng rng(909);
  const std::size_t n = 500;
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform(-3.0, 3.0);
    labels[i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  labels[0] = 1;
  labels[1] = 0;
  const double base = roc_auc(scores, labels);

  std::vector<double> mapped(n);
  for (std::size_t i = 0; i < n; ++i) mapped[i] = std::tanh(scores[i]) * 10 + 40;
  CHECK(roc_auc(mapped, labels) == base);
  for (std::size_t i = 0; i < n; ++i) mapped[i] = std::exp(scores[i] * 0.3);
  CHECK(roc_auc(mapped, labels) == base);
}

TEST_CASE("nearest-rank quantile") {
  std::vector<double> xs = {5, 1, 4, 2, 3};
  CHECK(quantile(xs, 0.5) == 3);
  CHECK(quantile(xs, 0.0) == 1);
  CHECK(quantile(xs, 1.0) == 5);
  CHECK(quantile({}, 0.5) == 0.0);
  CHECK(quantile({7.5}, 0.99) == 7.5);
}
