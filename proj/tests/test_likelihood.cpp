#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "trom/likelihood.hpp"
#include "trom/oracles.hpp"
#include "trom/rng.hpp"

using namespace trom;

namespace {

const double e_inv = std::exp(-1.0);

// All orderings of all subsets of {0..j-1}, including the empty list.
std::vector<std::vector<std::size_t>> all_rols(std::size_t j) {
  std::vector<std::vector<std::size_t>> out;
  for (unsigned mask = 0; mask < (1u << j); ++mask) {
    std::vector<std::size_t> sub;
    for (std::size_t k = 0; k < j; ++k)
      if (mask & (1u << k)) sub.push_back(k);
    do {
      out.push_back(sub);
    } while (std::next_permutation(sub.begin(), sub.end()));
  }
  return out;
}

}  // namespace

TEST_CASE("ordered_threshold_prob closed forms") {
  const std::vector<double> w1{0.0};
  CHECK(ordered_threshold_prob(w1) == doctest::Approx(1.0 - e_inv).epsilon(1e-14));
  const std::vector<double> w2{0.0, 0.0};
  CHECK(ordered_threshold_prob(w2) == doctest::Approx(0.5 * (1 - e_inv) * (1 - e_inv)).epsilon(1e-14));
  CHECK(ordered_threshold_prob(w2) == doctest::Approx(0.199788).epsilon(1e-6));
  CHECK(log_ordered_threshold_prob(w2) == doctest::Approx(std::log(ordered_threshold_prob(w2))));
}

TEST_CASE("ordered_threshold_prob rejects bad input") {
  const std::vector<double> empty;
  CHECK_THROWS(ordered_threshold_prob(empty));
  const std::vector<double> bad{0.0, std::nan("")};
  CHECK_THROWS(ordered_threshold_prob(bad));
  const std::vector<double> inf{std::numeric_limits<double>::infinity()};
  CHECK_THROWS(ordered_threshold_prob(inf));
}

TEST_CASE("K=3 example agrees with the quadrature oracle") {
  const std::vector<double> w{0.7, 0.1, -0.4};
  const double q = oracle::prob_quadrature(w);
  // Frozen value from an independent arbitrary-precision double integral.
  CHECK(q == doctest::Approx(0.06305519522236374).epsilon(1e-9));
  CHECK(std::abs(ordered_threshold_prob(w) - q) <= 1e-6);
}

TEST_CASE("quadrature oracle base cases") {
  const std::vector<double> w1{0.0}, w2{0.0, 0.0};
  CHECK(std::abs(oracle::prob_quadrature(w1) - (1 - e_inv)) <= 1e-9);
  CHECK(std::abs(oracle::prob_quadrature(w2) - 0.5 * (1 - e_inv) * (1 - e_inv)) <= 1e-9);
  const std::vector<double> w4{0, 0, 0, 0};
  CHECK_THROWS(oracle::prob_quadrature(w4));
}

TEST_CASE("terms expose kappa, F and memo") {
  const std::vector<double> w{0.3, -0.2, 0.5};
  const OrderedProbTerms t = ordered_threshold_terms(w);
  REQUIRE(t.kappa.size() == 3);
  REQUIRE(t.memo.size() == 3);
  CHECK(t.kappa.back() == doctest::Approx(1.0));
  for (double k : t.kappa) CHECK((k > 0.0 && k <= 1.0));
  for (double m : t.memo) CHECK((m >= 0.0 && m <= 1.0));
  CHECK(t.f_neg[1] == doctest::Approx(ev_cdf_neg(-0.2)));
  CHECK(t.memo[0] == doctest::Approx(1 - ev_cdf_neg(0.3)));
  CHECK(t.memo[2] == doctest::Approx(ordered_threshold_prob(w)));
  // kappa_1 = 1 / sum_j exp(-(w_1 - w_j))
  const double k1 = 1.0 / (1.0 + std::exp(-(0.3 + 0.2)) + std::exp(-(0.3 - 0.5)));
  CHECK(t.kappa[0] == doctest::Approx(k1).epsilon(1e-12));
}

TEST_CASE("rol_likelihood examples") {
  const std::vector<double> w{0.0, 0.0};
  const std::vector<std::size_t> none;
  CHECK(rol_likelihood(w, none) == doctest::Approx(std::exp(-2.0)).epsilon(1e-14));
  const std::vector<std::size_t> first{0};
  CHECK(rol_likelihood(w, first) == doctest::Approx((1 - e_inv) * e_inv).epsilon(1e-14));
  CHECK(rol_likelihood(w, first) == doctest::Approx(0.232544).epsilon(1e-6));
  const std::vector<std::size_t> dup{0, 0};
  CHECK_THROWS(rol_likelihood(w, dup));
  const std::vector<std::size_t> out_of_range{2};
  CHECK_THROWS(rol_likelihood(w, out_of_range));
}

TEST_CASE("rol_likelihood sums to one over all 16 lists at J=3") {
  const auto rols = all_rols(3);
  CHECK(rols.size() == 16);
  CounterRng rng{11, 3};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> w(3);
    for (double& x : w) x = std::sqrt(2.0) * rng.normal();
    double s = 0.0;
    for (const auto& r : rols) s += rol_likelihood(w, r);
    CHECK(std::abs(s - 1.0) <= 1e-10);
  }
}

TEST_CASE("raising a non-ranked utility lowers the likelihood") {
  CounterRng rng{12};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> w(5);
    for (double& x : w) x = std::sqrt(2.0) * rng.normal();
    const std::vector<std::size_t> ranked{1, 3};
    const double base = rol_likelihood(w, ranked);
    w[0] += 0.3;
    CHECK(rol_likelihood(w, ranked) < base);
  }
}

TEST_CASE("extreme utilities stay finite in the log domain") {
  const std::vector<double> w{45.0, -45.0, 30.0};
  const std::vector<std::size_t> ranked{0};
  const double lg = log_rol_likelihood(w, ranked);
  CHECK(std::isfinite(lg));
  CHECK(lg == doctest::Approx(-std::exp(30.0) - std::exp(-45.0)).epsilon(1e-12));
}

TEST_CASE("memo entries stay in [0,1] up to K=20") {
  CounterRng rng{13};
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * 20);
    std::vector<double> w(k);
    const bool near_equal = trial % 3 == 0;
    const double base = rng.normal();
    for (double& x : w) x = near_equal ? base + 1e-3 * rng.normal() : std::sqrt(2.0) * rng.normal();
    std::sort(w.begin(), w.end(), std::greater<>());
    const OrderedProbTerms t = ordered_threshold_terms(w);
    for (double m : t.memo) REQUIRE((m >= 0.0 && m <= 1.0));
  }
}

TEST_CASE("Plackett-Luce likelihood") {
  const std::vector<double> eq{0.4, 0.4, 0.4};
  std::vector<std::size_t> order{2, 0, 1};
  CHECK(pl_likelihood(eq, order) == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  const std::vector<double> w{1.0, 0.0};
  const std::vector<std::size_t> o{0, 1};
  CHECK(pl_likelihood(w, o) == doctest::Approx(std::exp(1.0) / (1 + std::exp(1.0))).epsilon(1e-14));
  CHECK(pl_likelihood(w, o) == doctest::Approx(0.731059).epsilon(1e-6));
  std::vector<double> shifted{6.0, 5.0};
  CHECK(std::abs(pl_likelihood(shifted, o) - pl_likelihood(w, o)) <= 1e-12);
  const std::vector<std::size_t> partial{0};
  CHECK_THROWS(pl_likelihood(w, partial));
}

TEST_CASE("partial urn likelihood") {
  const std::vector<double> eq{0.0, 0.0, 0.0, 0.0};
  const std::vector<std::size_t> two{3, 1};
  CHECK(partial_urn_likelihood(eq, two) == doctest::Approx(1.0 / 12.0).epsilon(1e-14));
  const std::vector<double> w{0.3, -1.0, 0.8, 0.1};
  const std::vector<std::size_t> full{2, 0, 3, 1};
  CHECK(partial_urn_likelihood(w, full) == doctest::Approx(pl_likelihood(w, full)).epsilon(1e-13));
  // Two of four ranked: the two-stage product, with the tail summing to one.
  const std::vector<std::size_t> top2{2, 0};
  double tail = 0.0;
  for (std::vector<std::size_t> rest : {std::vector<std::size_t>{2, 0, 3, 1}, {2, 0, 1, 3}})
    tail += pl_likelihood(w, rest);
  double denom1 = 0.0;
  for (double x : w) denom1 += std::exp(x);
  const double stage1 = std::exp(w[2]) / denom1;
  const double stage2 = std::exp(w[0]) / (denom1 - std::exp(w[2]));
  CHECK(partial_urn_likelihood(w, top2) == doctest::Approx(stage1 * stage2).epsilon(1e-13));
  CHECK(tail == doctest::Approx(stage1 * stage2).epsilon(1e-13));
  const std::vector<std::size_t> dup{1, 1};
  CHECK_THROWS(partial_urn_likelihood(w, dup));
}

TEST_CASE("pairwise rank probability") {
  CHECK(pairwise_rank_prob(0.0, 0.0) == doctest::Approx(0.5 * (1 - e_inv) * (1 - e_inv)).epsilon(1e-14));
  CHECK(pairwise_rank_prob(0.5, -1e6) == doctest::Approx(0.0));
  CHECK(pairwise_rank_prob(0.5, -800.0) == 0.0);
  CounterRng rng{14};
  for (int trial = 0; trial < 200; ++trial) {
    const double a = 2 * rng.normal(), b = 2 * rng.normal();
    const double both = (1 - ev_cdf_neg(a)) * (1 - ev_cdf_neg(b));
    CHECK(std::abs(pairwise_rank_prob(a, b) + pairwise_rank_prob(b, a) - both) <= 1e-10);
    const std::vector<double> w{a, b};
    CHECK(std::abs(pairwise_rank_prob(a, b) - ordered_threshold_prob(w)) <= 1e-12);
  }
}

TEST_CASE("pairwise rank probability against 10^7 Monte Carlo draws") {
  const std::vector<double> w{1.0, -0.5};
  const std::vector<std::size_t> ranked{0, 1};
  // The MC event enforces "everything else below zero"; with J=2 both are ranked.
  const auto mc = oracle::prob_mc(w, ranked, 10'000'000, 2024);
  CHECK(std::abs(mc.estimate - pairwise_rank_prob(1.0, -0.5)) <= 3 * mc.std_error);
}

TEST_CASE("Monte Carlo oracle examples") {
  const std::vector<double> w{0.0, 0.0};
  const std::vector<std::size_t> none;
  const auto mc = oracle::prob_mc(w, none, 1'000'000, 7);
  CHECK(std::abs(mc.estimate - 0.1353) <= 0.001);
  CHECK(mc.std_error > 0.0);
  CHECK_THROWS(oracle::prob_mc(w, none, 5000, 7));

  const std::vector<double> w3{0.4, -0.3, 0.1};
  std::vector<double> shifted = w3;
  for (double& x : shifted) x += 20.0;
  const std::vector<std::size_t> full{0, 2, 1};
  const auto pl = oracle::prob_mc(shifted, full, 1'000'000, 8);
  CHECK(std::abs(pl.estimate - pl_likelihood(w3, full)) <= 3 * pl.std_error);
}

TEST_CASE("listing and length oracles") {
  const auto l = oracle::listing_mc(0.0, 1'000'000, 9);
  CHECK(std::abs(l.estimate - (1 - e_inv)) <= 3 * l.std_error);
  const std::vector<double> w{0.0, 0.0, 0.0};
  const auto len = oracle::rol_length_mc(w, 100'000, 10);
  CHECK(std::abs(len.estimate - 3 * (1 - e_inv)) <= 4 * len.std_error);
}

TEST_CASE("shifted evaluator matches the direct likelihood") {
  CounterRng rng{15};
  ShiftedRolEvaluator ev;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t j = 1 + static_cast<std::size_t>(rng.uniform() * 12);
    std::vector<double> a(j);
    for (double& x : a) x = 2.0 * rng.normal();
    std::vector<std::size_t> perm(j);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t k = static_cast<std::size_t>(rng.uniform() * static_cast<double>(j + 1));
    const std::vector<std::size_t> ranked(perm.begin(), perm.begin() + static_cast<long>(k));
    const std::vector<std::size_t> unranked(perm.begin() + static_cast<long>(k), perm.end());
    ev.reset(a, ranked, unranked);
    for (int t = 0; t < 5; ++t) {
      const double d = 3.0 * rng.normal();
      std::vector<double> w = a;
      for (double& x : w) x -= d;
      const double direct = log_rol_likelihood(w, ranked);
      const double fast = ev.log_prob(d);
      if (std::isinf(direct)) {
        CHECK(std::isinf(fast));
      } else {
        CHECK(std::abs(fast - direct) <= 1e-10 * std::max(1.0, std::abs(direct)));
      }
    }
  }
}

TEST_CASE("batched shifts match one-at-a-time evaluation") {
  CounterRng rng{17};
  ShiftedRolEvaluator ev;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t j = 2 + static_cast<std::size_t>(rng.uniform() * 12);
    std::vector<double> a(j);
    for (double& x : a) x = 1.5 * rng.normal();
    std::vector<std::size_t> perm(j);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(j));
    const std::vector<std::size_t> ranked(perm.begin(), perm.begin() + static_cast<long>(k));
    const std::vector<std::size_t> unranked(perm.begin() + static_cast<long>(k), perm.end());
    ev.reset(a, ranked, unranked);
    std::vector<double> d(200);
    for (double& x : d) x = 4.0 * rng.normal() - 2.0;
    std::vector<double> out = d;
    ev.log_probs(out, out);
    for (std::size_t t = 0; t < d.size(); ++t) {
      std::vector<double> w = a;
      for (double& x : w) x -= d[t];
      const double direct = log_rol_likelihood(w, ranked);
      if (std::isinf(direct)) {
        CHECK(std::isinf(out[t]));
      } else {
        CHECK(std::abs(out[t] - direct) <= 1e-10 * std::max(1.0, std::abs(direct)));
      }
    }
  }
}

TEST_CASE("race form agrees with the recursion") {
  CounterRng rng{16};
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * 10);
    std::vector<double> w(k);
    for (double& x : w) x = std::sqrt(2.0) * rng.normal();
    const double rec = log_ordered_threshold_prob(w);
    const double race = log_ordered_threshold_prob_race(w);
    CHECK(std::abs(rec - race) <= 1e-11 * std::max(1.0, std::abs(rec)));
  }
  const std::vector<double> big{7.0};
  CHECK_THROWS(log_ordered_threshold_prob_race(big));
}

TEST_CASE("strongly cancelling lists keep full relative accuracy") {
  // Very negative utilities: I(K) is a product of small listing chances and
  // the recursion's terms are many orders larger than the result.
  const std::vector<double> w{-8.0, -8.5, -9.0, -9.5, -10.0};
  const double lg = log_ordered_threshold_prob(w);
  // Leading order: prod(e^{w}) / K!, correction factor close to 1.
  double leading = -std::log(120.0);
  for (double x : w) leading += x;
  CHECK(lg == doctest::Approx(leading).epsilon(1e-3));
  CHECK(lg == doctest::Approx(log_ordered_threshold_prob_race(w)).epsilon(1e-13));
}
