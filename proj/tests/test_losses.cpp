#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "doctest.h"
#include "embrank/errors.hpp"
#include "embrank/losses.hpp"
#include "embrank/rng.hpp"

using namespace embrank;

namespace {

// Central finite differences, 64-bit, h = 1e-5.
double central_diff(const std::function<double(double)>& f, double x) {
  const double h = 1e-5;
  return (f(x + h) - f(x - h)) / (2 * h);
}

std::vector<double> random_vec(Rng& rng, std::size_t dim, double spread = 1.0) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.uniform(-spread, spread);
  return v;
}


}  // namespace

TEST_CASE("infonce equal logits with one negative gives ln 2") {
  const std::vector<double> a = {1.0, 0.0};
  const std::vector<double> p = {0.5, 0.5};
  const std::vector<std::vector<double>> negs = {{0.5, 0.5}};
  const auto r = infonce_loss<double>(a, p, negs, 1.0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("infonce loss vanishes in the perfect-separation limit") {
  const std::vector<double> a = {100.0, 0.0};
  const std::vector<double> p = {1.0, 0.0};
  const std::vector<std::vector<double>> negs = {{-1.0, 0.0}, {0.0, 1.0}};
  const auto r = infonce_loss<double>(a, p, negs, 1.0);
  CHECK(r.loss < 1e-12);
  CHECK(r.loss >= 0.0);
}

TEST_CASE("infonce stays finite under extreme logits") {
  const std::vector<double> a = {1e4, 1e4};
  const std::vector<double> p = {1e4, 1e4};
  const std::vector<std::vector<double>> negs = {{-1e4, -1e4}};
  const auto r = infonce_loss<double>(a, p, negs, 0.01);
  CHECK(std::isfinite(r.loss));
  for (double g : r.grad_anchor) CHECK(std::isfinite(g));
}

TEST_CASE("infonce validates arguments") {
  const std::vector<double> a = {1.0, 0.0};
  const std::vector<double> p3 = {1.0, 0.0, 0.0};
  const std::vector<std::vector<double>> negs = {{0.0, 1.0}};
  CHECK_THROWS_AS(infonce_loss<double>(a, p3, negs, 1.0), InvalidArgument);
  CHECK_THROWS_AS(infonce_loss<double>(a, a, {}, 1.0), InvalidArgument);
  CHECK_THROWS_AS(infonce_loss<double>(a, a, negs, 0.0), InvalidArgument);
}

TEST_CASE("infonce analytic gradients match central finite differences") {
  // Relative error is measured norm-wise over the full gradient vector per
  // instance; inputs are drawn at a scale where tau=0.1 keeps the softmax
  // away from total saturation so the finite differences carry signal.
  Rng rng(314);
  const std::size_t dim = 8;
  const double tau = 0.1;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a = random_vec(rng, dim, 0.3);
    std::vector<double> p = random_vec(rng, dim, 0.3);
    const std::size_t k = 1 + rng.uniform_u64(4);
    std::vector<std::vector<double>> negs;
    for (std::size_t i = 0; i < k; ++i) negs.push_back(random_vec(rng, dim, 0.3));

    const auto analytic = infonce_loss<double>(a, p, negs, tau);
    auto loss_at = [&]() { return infonce_loss<double>(a, p, negs, tau).loss; };

    std::vector<double> flat_analytic, flat_fd;
    auto probe = [&](std::vector<double>& vec, const std::vector<double>& grad) {
      for (std::size_t j = 0; j < vec.size(); ++j) {
        flat_analytic.push_back(grad[j]);
        flat_fd.push_back(central_diff(
            [&](double x) {
              const double saved = vec[j];
              vec[j] = x;
              const double l = loss_at();
              vec[j] = saved;
              return l;
            },
            vec[j]));
      }
    };
    probe(a, analytic.grad_anchor);
    probe(p, analytic.grad_positive);
    for (std::size_t i = 0; i < k; ++i) probe(negs[i], analytic.grad_negatives[i]);

    double diff2 = 0, ref2 = 0;
    for (std::size_t j = 0; j < flat_fd.size(); ++j) {
      diff2 += (flat_analytic[j] - flat_fd[j]) * (flat_analytic[j] - flat_fd[j]);
      ref2 += flat_fd[j] * flat_fd[j];
    }
    CHECK(std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12) <= 1e-4);
  }
}

TEST_CASE("transe_score hand values") {
  const std::vector<double> h = {1.0, 0.0};
  const std::vector<double> r = {0.0, 1.0};
  const std::vector<double> t = {1.0, 1.0};
  CHECK(transe_score<double>(h, r, t) == 0.0);  // exact translation

  const std::vector<double> zero = {0.0, 0.0};
  CHECK(transe_score<double>(zero, zero, zero) == 0.0);

  CHECK(transe_score<double>(h, zero, zero) == doctest::Approx(-1.0).epsilon(1e-15));

  const std::vector<double> bad = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(transe_score<double>(h, r, bad), InvalidArgument);
}

TEST_CASE("margin ranking loss hinge behavior") {
  const std::vector<double> h = {1.0, 0.0};
  const std::vector<double> r = {0.0, 1.0};
  const std::vector<double> t = {1.0, 1.0};  // perfect positive: d_pos = 0
  const std::vector<double> far = {5.0, -5.0};
  // Corruption far away: d_neg > margin + d_pos -> hinge inactive.
  auto inactive = margin_ranking_loss<double>(h, r, t, far, t, 1.0);
  CHECK(inactive.loss == 0.0);
  for (double g : inactive.grad_head) CHECK(g == 0.0);

  // Corruption identical to positive: loss = margin exactly.
  auto active = margin_ranking_loss<double>(h, r, t, h, t, 1.0);
  CHECK(active.loss == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(margin_ranking_loss<double>(h, r, t, h, t, 0.0), InvalidArgument);
}

TEST_CASE("margin ranking gradients match central finite differences") {
  Rng rng(2718);
  const std::size_t dim = 6;
  const double margin = 1.0;
  int accepted = 0;
  while (accepted < 100) {
    std::vector<double> h = random_vec(rng, dim);
    std::vector<double> r = random_vec(rng, dim);
    std::vector<double> t = random_vec(rng, dim);
    std::vector<double> nh = random_vec(rng, dim);
    std::vector<double> nt = random_vec(rng, dim);

    // Keep away from the hinge kink and from zero-norm kinks so the central
    // difference is valid.
    auto loss_at = [&]() { return margin_ranking_loss<double>(h, r, t, nh, nt, margin); };
    const auto probe = loss_at();
    std::vector<double> dp(dim), dn(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      dp[j] = h[j] + r[j] - t[j];
      dn[j] = nh[j] + r[j] - nt[j];
    }
    const double d_pos = l2_norm(std::span<const double>(dp));
    const double d_neg = l2_norm(std::span<const double>(dn));
    if (std::abs(margin + d_pos - d_neg) < 0.05 || d_pos < 0.05 || d_neg < 0.05) continue;
    ++accepted;

    std::vector<double> flat_analytic, flat_fd;
    auto probe_component = [&](std::vector<double>& vec, const std::vector<double>& grad) {
      for (std::size_t j = 0; j < dim; ++j) {
        flat_analytic.push_back(grad[j]);
        flat_fd.push_back(central_diff(
            [&](double x) {
              const double saved = vec[j];
              vec[j] = x;
              const double l = loss_at().loss;
              vec[j] = saved;
              return l;
            },
            vec[j]));
      }
    };
    probe_component(h, probe.grad_head);
    probe_component(r, probe.grad_relation);
    probe_component(t, probe.grad_tail);
    probe_component(nh, probe.grad_neg_head);
    probe_component(nt, probe.grad_neg_tail);

    double diff2 = 0, ref2 = 0;
    for (std::size_t j = 0; j < flat_fd.size(); ++j) {
      diff2 += (flat_analytic[j] - flat_fd[j]) * (flat_analytic[j] - flat_fd[j]);
      ref2 += flat_fd[j] * flat_fd[j];
    }
    CHECK(std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-12) <= 1e-4);
  }
}
