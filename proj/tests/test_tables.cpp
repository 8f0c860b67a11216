#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "embrank/errors.hpp"
#include "embrank/rng.hpp"
#include "embrank/table.hpp"

using namespace embrank;

TEST_CASE("hash_to_row golden vectors never change") {
  // Frozen once; the disk and wire formats depend on these.
  CHECK(hash_to_row(0, 4096) == 0);
  CHECK(hash_to_row(1, 4096) == 1509);
  CHECK(hash_to_row(2, 4096) == 1162);
  CHECK(hash_to_row(12345, 4096) == 3409);
  CHECK(hash_to_row(0xDEADBEEFULL, 4096) == 3818);
  CHECK(hash_to_row(0xFFFFFFFFFFFFFFFFULL, 4096) == 3451);
  CHECK(hash_to_row(1, 1000) == 789);
  CHECK(hash_to_row(42424242, 1000) == 608);
}

TEST_CASE("hash_to_row basics") {
  CHECK(hash_to_row(12345, 1) == 0);  // modulo 1
  for (EntityId id : {EntityId{0}, EntityId{7}, EntityId{1} << 63})
    CHECK(hash_to_row(id, 977) == hash_to_row(id, 977));  // deterministic
  CHECK_THROWS_AS(hash_to_row(1, 0), InvalidArgument);
}

TEST_CASE("hash_to_row bucket histogram passes chi-square uniformity") {
  const std::uint64_t m = 4096;
  const std::uint64_t n = 100000;
  std::vector<std::uint64_t> counts(m, 0);
  for (std::uint64_t id = 0; id < n; ++id) ++counts[hash_to_row(id, m)];

  const double expected = static_cast<double>(n) / static_cast<double>(m);
  double chi2 = 0;
  for (std::uint64_t c : counts) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }

  // Wilson-Hilferty approximation of the chi-square quantile at p = 0.999,
  // dof = m - 1; uniformity holds at p > 0.001 iff the statistic stays below.
  const double dof = static_cast<double>(m - 1);
  const double z = 3.090232306167813;  // Phi^-1(0.999)
  const double t = 1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof));
  const double critical = dof * t * t * t;
  CHECK(chi2 < critical);           // observed 4175.37 vs critical 4380.38
  CHECK(chi2 == doctest::Approx(4175.370240).epsilon(1e-9));  // frozen statistic
}

TEST_CASE("lookup maps colliding ids to identical rows") {
  EmbeddingTable t = EmbeddingTable::random_init("user", "v1", 16, 8, 99);
  // Find two distinct ids with the same row by scanning.
  EntityId a = 0, b = 0;
  bool found = false;
  for (EntityId i = 1; i < 4000 && !found; ++i) {
    if (hash_to_row(i, 16) == hash_to_row(i + 5000, 16)) {
      a = i;
      b = i + 5000;
      found = true;
    }
  }
  REQUIRE(found);
  const std::vector<EntityId> ids = {a, b, a};
  LookupResult r = lookup(t, ids);
  CHECK(r.batch == 3);
  for (std::size_t j = 0; j < 8; ++j) CHECK(r.row(0)[j] == r.row(1)[j]);
  CHECK(r.collided[0]);
  CHECK(r.collided[1]);
  CHECK(r.collided[2]);
}

TEST_CASE("lookup duplicate id alone is not a collision") {
  EmbeddingTable t = EmbeddingTable::random_init("user", "v1", 1024, 4, 1);
  const std::vector<EntityId> ids = {77, 77};
  LookupResult r = lookup(t, ids);
  CHECK_FALSE(r.collided[0]);
  CHECK_FALSE(r.collided[1]);
}

TEST_CASE("lookup of empty batch returns empty matrix with dim columns") {
  EmbeddingTable t = EmbeddingTable::random_init("user", "v1", 64, 12, 5);
  LookupResult r = lookup(t, {});
  CHECK(r.batch == 0);
  CHECK(r.dim == 12);
  CHECK(r.embeddings.empty());
}

TEST_CASE("lookup preserves order under permutation") {
  EmbeddingTable t = EmbeddingTable::random_init("user", "v1", 128, 6, 3);
  Rng rng(42);
  std::vector<EntityId> ids(257);
  for (auto& id : ids) id = rng.next_u64();

  std::vector<std::size_t> perm(ids.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  std::vector<EntityId> permuted(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) permuted[i] = ids[perm[i]];

  LookupResult base = lookup(t, ids);
  LookupResult shuf = lookup(t, permuted);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < 6; ++j) CHECK(shuf.row(i)[j] == base.row(perm[i])[j]);
}

TEST_CASE("expected_collision_fraction closed form") {
  CHECK(expected_collision_fraction(1, 1) == 0.0);
  CHECK(expected_collision_fraction(1, 12345) == 0.0);
  // n=2, m=2: exact 0.25 (two ids in two buckets collide half the time, and
  // then exactly half of the queries share a bucket).
  CHECK(expected_collision_fraction(2, 2) == doctest::Approx(0.25).epsilon(1e-12));
  // n = 10m regime from the closed form.
  const double v = expected_collision_fraction(10000, 1000);
  CHECK(v > 0.89);
  CHECK(v < 0.91);
  CHECK_THROWS_AS(expected_collision_fraction(0, 10), InvalidArgument);
  CHECK_THROWS_AS(expected_collision_fraction(10, 0), InvalidArgument);
}

namespace {

// Independent Monte Carlo oracle: throw n ids into m buckets uniformly; each
// occupied bucket grants one id a distinct slot, every surplus id counts as a
// collision. Matches "fraction of ids not occupying a distinct bucket".
double collision_fraction_monte_carlo(std::uint64_t n, std::uint64_t m, std::uint64_t trials,
                                      std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint32_t> bucket_count(m);
  double total_fraction = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    std::fill(bucket_count.begin(), bucket_count.end(), 0u);
    for (std::uint64_t i = 0; i < n; ++i)
      ++bucket_count[static_cast<std::uint32_t>(rng.uniform_u64(m))];
    std::uint64_t occupied = 0;
    for (std::uint32_t c : bucket_count)
      if (c > 0) ++occupied;
    total_fraction += static_cast<double>(n - occupied) / static_cast<double>(n);
  }
  return total_fraction / static_cast<double>(trials);
}

}  // namespace

TEST_CASE("expected_collision_fraction matches Monte Carlo") {
  CHECK(std::abs(expected_collision_fraction(2, 2) -
                 collision_fraction_monte_carlo(2, 2, 1000000, 7)) < 0.005);
  CHECK(std::abs(expected_collision_fraction(10000, 1000) -
                 collision_fraction_monte_carlo(10000, 1000, 120, 11)) < 0.005);
  CHECK(std::abs(expected_collision_fraction(100, 256) -
                 collision_fraction_monte_carlo(100, 256, 12000, 13)) < 0.005);
}

TEST_CASE("expected_collision_fraction is non-increasing in num_rows") {
  for (std::uint64_t n : {10ULL, 100ULL, 5000ULL}) {
    double prev = 1.1;
    for (std::uint64_t m : {1ULL, 2ULL, 8ULL, 64ULL, 512ULL, 4096ULL, 65536ULL}) {
      const double v = expected_collision_fraction(n, m);
      CHECK(v <= prev + 1e-12);
      prev = v;
    }
  }
}

TEST_CASE("table invariants enforced") {
  CHECK_THROWS_AS(EmbeddingTable::zeros("t", "", 4, 4), InvalidArgument);  // empty version
  CHECK_THROWS_AS(EmbeddingTable::zeros("t", "v", 0, 4), InvalidArgument);
  CHECK_THROWS_AS(EmbeddingTable::from_f32("t", "v", 2, 3, std::vector<float>(5)),
                  InvalidArgument);  // payload mismatch
  CHECK_THROWS_AS(EmbeddingTable::from_int4q("t", "v", 1, 3, 2, {}), InvalidArgument);  // odd dim
}
