#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "trom/likelihood.hpp"
#include "trom/prediction.hpp"
#include "trom/rng.hpp"

using namespace trom;

TEST_CASE("listing probability") {
  CHECK(listing_prob(0.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-15));
  CHECK(listing_prob(-std::numeric_limits<double>::infinity()) == 0.0);
  CHECK(listing_prob(-800.0) == 0.0);
  CHECK(listing_prob(-40.0) == doctest::Approx(std::exp(-40.0)).epsilon(1e-12));

  CounterRng rng{71};
  const double w = 0.3;
  const int n = 1000000;
  int hits = 0;
  for (int t = 0; t < n; ++t) hits += w + rng.gumbel() > 0.0;
  const double p = listing_prob(w);
  CHECK(std::abs(static_cast<double>(hits) / n - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
}

TEST_CASE("expected list length") {
  CHECK(expected_rol_length({std::vector<double>(15, 0.0)}) ==
        doctest::Approx(15.0 * (1.0 - std::exp(-1.0))));
  CHECK(expected_rol_length({{0.7}}) == listing_prob(0.7));

  CounterRng rng{72};
  NetUtilityIndex w{{0.4, -1.0, 1.3, -0.2, 0.0, -2.5}};
  const int n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (int t = 0; t < n; ++t) {
    int k = 0;
    for (double x : w.w) k += x + rng.gumbel() > 0.0;
    sum += k;
    sq += k * k;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - expected_rol_length(w)) <= 3.0 * se);
}

TEST_CASE("school popularity") {
  Eigen::MatrixXd x(3, 1);
  x << 0.5, -0.2, 1.0;
  const ChoiceDataset d =
      fixtures::dataset({fixtures::student(1, x, {1}), fixtures::student(2, x, {3, 1})}, 1);
  ThresholdParams p;
  p.beta = Eigen::VectorXd::Constant(1, 0.8);
  const auto pop = school_popularity(d, p);
  for (SchoolId j = 1; j <= 3; ++j)
    CHECK(pop.at(j) == doctest::Approx(2.0 * listing_prob(0.8 * x(j - 1, 0))).epsilon(1e-15));
  CHECK_THROWS_AS(school_popularity(d, p, Estimator::urn), std::invalid_argument);
}

TEST_CASE("predicted lists") {
  const Student s = fixtures::student(1, Eigen::MatrixXd::Zero(4, 1), {});
  PredictMode mode;
  mode.tau = 0.5;
  CHECK(predicted_rol(s, {{30, 10, 20, 40}}, mode).ranked == std::vector<SchoolId>{4, 1, 3, 2});
  CHECK(predicted_rol(s, {{-30, -10, -20, -40}}, mode).empty());
  // listing_prob(0) ~ 0.632 clears tau = 0.5 but not tau = 0.7.
  CHECK(predicted_rol(s, {{0, -5, -5, -5}}, mode).ranked == std::vector<SchoolId>{1});
  mode.tau = 0.7;
  CHECK(predicted_rol(s, {{0, -5, -5, -5}}, mode).empty());
  mode.filter = false;
  CHECK(predicted_rol(s, {{0, -5, -6, -4}}, mode).ranked == std::vector<SchoolId>{1, 4, 2, 3});
  PredictMode top;
  top.kind = PredictMode::Kind::top_k;
  top.k = 2;
  CHECK(predicted_rol(s, {{-9, 1, -3, 2}}, top).ranked == std::vector<SchoolId>{4, 2});
}

namespace {

ChoiceDataset distance_dataset() {
  CounterRng rng{73};
  std::vector<Student> st;
  for (int i = 0; i < 30; ++i) {
    Eigen::MatrixXd x(5, 2);
    for (int j = 0; j < 5; ++j) {
      x(j, 0) = rng.uniform(0.0, 20.0);  // distance
      x(j, 1) = rng.normal();            // score
    }
    st.push_back(fixtures::student(i + 1, x, {1}, 1.0, 0.0, Eigen::VectorXd::Constant(1, rng.normal())));
  }
  ChoiceDataset d = fixtures::dataset(st, 2, 1);
  d.pair_covariate_names = {"distance", "score"};
  return d;
}

}  // namespace

TEST_CASE("margin grid") {
  const ChoiceDataset d = distance_dataset();
  ThresholdParams p;
  p.beta = Eigen::Vector2d(-0.15, 0.9);
  p.has_latent = true;
  p.gamma = Eigen::VectorXd::Constant(1, 0.3);
  p.sigma2 = 0.2;

  MarginSpec spec;
  spec.varying = "distance";
  spec.grid = {1, 5, 10, 15, 20};
  spec.profiles = {{"high", {{"score", 1.5}}}, {"mean", {}}, {"low", {{"score", -1.5}}}};
  const auto pts = margin_grid(d, p, spec);
  REQUIRE(pts.size() == 15);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t g = 1; g < 5; ++g) CHECK(pts[r * 5 + g].prob < pts[r * 5 + g - 1].prob);
  for (std::size_t g = 0; g < 5; ++g) {
    CHECK(pts[g].prob > pts[5 + g].prob);
    CHECK(pts[5 + g].prob > pts[10 + g].prob);
  }

  SUBCASE("single point equals a direct call") {
    MarginSpec one;
    one.varying = "distance";
    one.grid = {3.0};
    one.profiles = {{"", {{"score", 0.25}}}};
    one.student_fixed = {{"z1", 1.0}};
    one.outside_value = 0.0;
    one.admit_prob = 1.0;
    const auto r = margin_grid(d, p, one);
    REQUIRE(r.size() == 1);
    CHECK(r[0].prob == doctest::Approx(listing_prob(-0.15 * 3.0 + 0.9 * 0.25 - 0.3)).epsilon(1e-14));
  }
  SUBCASE("pairwise variant") {
    MarginSpec pair = spec;
    pair.profiles = {{"high", {{"score", 1.5}}}};
    pair.low_profile = MarginProfile{"low", {{"score", -1.5}}};
    const auto r = margin_grid(d, p, pair);
    for (const auto& pt : r) CHECK(pt.prob > 0.0);
  }
  SUBCASE("bootstrap bands bracket the estimate") {
    Eigen::MatrixXd reps(60, 4);
    CounterRng rng{74};
    for (Eigen::Index r = 0; r < 60; ++r)
      reps.row(r) << -0.15 + 0.01 * rng.normal(), 0.9 + 0.05 * rng.normal(), 0.3, 0.2;
    const auto r = margin_grid(d, p, spec, &reps);
    for (const auto& pt : r) {
      REQUIRE(pt.lo.has_value());
      CHECK(*pt.lo <= *pt.hi);
    }
  }
  SUBCASE("bad specifications") {
    MarginSpec bad = spec;
    bad.grid = {1, 1};
    CHECK_THROWS(margin_grid(d, p, bad));
    bad = spec;
    bad.varying = "nope";
    CHECK_THROWS(margin_grid(d, p, bad));
  }
}
