#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "trom/model.hpp"
#include "trom/optimizer.hpp"

using namespace trom;

TEST_CASE("extreme value cdf at the threshold") {
  CHECK(ev_cdf_neg(0.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(ev_cdf_neg(40.0) == 0.0);
  CHECK(log_ev_cdf_neg(40.0) == -std::exp(40.0));
  CHECK(ev_cdf_neg(-40.0) == doctest::Approx(1.0));
  CHECK(log_ev_cdf_neg(-40.0) == doctest::Approx(-std::exp(-40.0)).epsilon(1e-15));
  CHECK_THROWS(ev_cdf_neg(std::nan("")));
}

TEST_CASE("net utility arithmetic") {
  SUBCASE("cost scaled by admission probability") {
    const Student s = fixtures::student(1, Eigen::MatrixXd::Zero(1, 2), {}, 0.5, 0.2);
    const NetUtilityIndex w = net_utility(s, Eigen::Vector2d(0.5, 0.8), 0.5);
    CHECK(w[0] == doctest::Approx(-1.2).epsilon(1e-15));
  }
  SUBCASE("two covariates") {
    Eigen::MatrixXd x(1, 2);
    x << 1.0, 2.0;
    const Student s = fixtures::student(1, x, {}, 1.0, 0.1);
    CHECK(net_utility(s, Eigen::Vector2d(0.5, 0.8), 0.3)[0] == doctest::Approx(1.7).epsilon(1e-15));
  }
  SUBCASE("no cost reduces to the linear index") {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
    const Student s = fixtures::student(1, x, {});
    const Eigen::Vector3d beta(0.3, -1.0, 2.0);
    const Eigen::VectorXd xb = x * beta;
    const NetUtilityIndex w = net_utility(s, beta, 0.0);
    for (Eigen::Index j = 0; j < 5; ++j) CHECK(w[static_cast<std::size_t>(j)] == xb[j]);
  }
  SUBCASE("permuting schools permutes w") {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 2);
    Eigen::MatrixXd xp(4, 2);
    const int perm[4] = {2, 0, 3, 1};
    for (int j = 0; j < 4; ++j) xp.row(j) = x.row(perm[j]);
    const Eigen::Vector2d beta(1.0, -0.5);
    const auto w = net_utility(fixtures::student(1, x, {}, 0.7, 0.3), beta, 0.4);
    const auto wp = net_utility(fixtures::student(1, xp, {}, 0.7, 0.3), beta, 0.4);
    for (int j = 0; j < 4; ++j) CHECK(wp[static_cast<std::size_t>(j)] == w[static_cast<std::size_t>(perm[j])]);
  }
}

TEST_CASE("dataset validation") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 1);
  CHECK_NOTHROW(fixtures::dataset({fixtures::student(1, x, {2, 1})}, 1));
  CHECK_THROWS_AS(fixtures::dataset({fixtures::student(1, x, {2, 2})}, 1), DataError);
  CHECK_THROWS_AS(fixtures::dataset({fixtures::student(1, x, {4})}, 1), DataError);
  CHECK_THROWS_AS(fixtures::dataset({fixtures::student(1, x, {1}, 0.0)}, 1), DataError);
  Eigen::MatrixXd bad = x;
  bad(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(fixtures::dataset({fixtures::student(1, bad, {1})}, 1), DataError);

  const ChoiceDataset d = fixtures::dataset({fixtures::student(1, x, {3, 1}), fixtures::student(2, x, {})}, 1);
  CHECK(d.students[0].ranked_index == std::vector<std::size_t>{2, 0});
  CHECK(d.students[0].unranked_index == std::vector<std::size_t>{1});
  CHECK(d.n_ranking_students() == 1);
}

TEST_CASE("parameter checks") {
  const ChoiceDataset d = fixtures::dataset(
      {fixtures::student(1, Eigen::MatrixXd::Zero(2, 2), {1}, 1.0, 0.0, Eigen::VectorXd::Ones(1))}, 2, 1);
  ThresholdParams p;
  p.beta = Eigen::Vector2d(1, 2);
  CHECK_NOTHROW(p.check(d));
  p.has_latent = true;
  p.gamma = Eigen::VectorXd::Ones(1);
  p.sigma2 = 0.0;
  CHECK_THROWS(p.check(d));
  p.sigma2 = 0.5;
  CHECK_NOTHROW(p.check(d));
  CHECK(p.n_free() == 4);
  p.beta = Eigen::VectorXd::Ones(3);
  CHECK_THROWS(p.check(d));
}

TEST_CASE("quasi-Newton maximizer") {
  SUBCASE("concave quadratic") {
    const Eigen::Vector3d centre(1.0, -2.0, 0.5);
    auto f = [&](const Eigen::VectorXd& x) {
      const Eigen::Vector3d d = x - centre;
      return -(d[0] * d[0] + 10.0 * d[1] * d[1] + 0.1 * d[2] * d[2] + d[0] * d[1]);
    };
    const auto r = optim::maximize(f, Eigen::Vector3d::Zero(), {});
    CHECK(r.converged);
    CHECK((r.x - centre).norm() < 1e-5);
  }
  SUBCASE("Rosenbrock") {
    auto f = [](const Eigen::VectorXd& x) {
      return -(100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2));
    };
    optim::Options o;
    o.max_iter = 2000;
    const auto r = optim::maximize(f, Eigen::Vector2d(-1.2, 1.0), o);
    CHECK(std::abs(r.x[0] - 1.0) < 1e-4);
    CHECK(std::abs(r.x[1] - 1.0) < 1e-4);
  }
  SUBCASE("central differences") {
    auto f = [](const Eigen::VectorXd& x) { return std::sin(x[0]) * x[1]; };
    const Eigen::VectorXd g = optim::central_gradient(f, Eigen::Vector2d(0.3, 2.0), 1e-5);
    CHECK(g[0] == doctest::Approx(std::cos(0.3) * 2.0).epsilon(1e-8));
    CHECK(g[1] == doctest::Approx(std::sin(0.3)).epsilon(1e-8));
  }
}
