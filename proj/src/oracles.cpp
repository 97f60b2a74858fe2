#include "trom/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "trom/rng.hpp"

namespace trom::oracle {

namespace {

using boost::math::quadrature::gauss_kronrod;

constexpr unsigned kMaxDepth = 12;
constexpr double kRelTol = 1e-11;
// The density beyond this point is below e^-40.
constexpr double kUpper = 40.0;

// Standard Type-1 extreme value density and distribution function.
double ev_density(double e) { return std::exp(-e - std::exp(-e)); }
double ev_cdf(double e) { return std::exp(-std::exp(-e)); }

template <class F>
double integrate(F&& f, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  double err = 0.0;
  return gauss_kronrod<double, 31>::integrate(f, lo, hi, kMaxDepth, kRelTol, &err);
}

McEstimate finish(std::size_t hits, std::size_t draws) {
  McEstimate out;
  out.hits = hits;
  out.draws = draws;
  const double n = static_cast<double>(draws);
  out.estimate = static_cast<double>(hits) / n;
  const double adj = (static_cast<double>(hits) + 0.5) / (n + 1.0);
  out.std_error = std::sqrt(adj * (1.0 - adj) / n);
  return out;
}

void require_draws(std::size_t draws) {
  if (draws < 10000) throw std::invalid_argument("Monte Carlo oracle needs at least 10^4 draws");
}

}  // namespace

double prob_quadrature(std::span<const double> w) {
  const std::size_t k = w.size();
  if (k < 1 || k > 3) throw std::invalid_argument("prob_quadrature supports 1 <= K <= 3");
  for (double x : w)
    if (!std::isfinite(x)) throw std::domain_error("prob_quadrature: non-finite utility");
  // eps_k ranges over [-w_k, w_{k-1} + eps_{k-1} - w_k]; the innermost
  // integral of the density is a difference of distribution functions.
  auto mass = [](double lo, double hi) { return hi > lo ? ev_cdf(hi) - ev_cdf(lo) : 0.0; };
  auto level2 = [&](double e1) {
    if (k == 2) return mass(-w[1], w[0] + e1 - w[1]);
    return integrate(
        [&](double e2) { return ev_density(e2) * mass(-w[2], w[1] + e2 - w[2]); }, -w[1],
        w[0] + e1 - w[1]);
  };
  const double top = std::max(kUpper, -w[0] + kUpper);
  if (k == 1) return integrate(ev_density, -w[0], top) + (1.0 - ev_cdf(top));
  return integrate([&](double e1) { return ev_density(e1) * level2(e1); }, -w[0], top);
}

McEstimate prob_mc(std::span<const double> w, std::span<const std::size_t> ranked,
                   std::size_t draws, std::uint64_t seed) {
  require_draws(draws);
  const std::size_t j = w.size();
  std::vector<char> is_ranked(j, 0);
  for (std::size_t r : ranked) {
    if (r >= j || is_ranked[r]) throw std::invalid_argument("prob_mc: invalid ROL");
    is_ranked[r] = 1;
  }
  std::vector<std::size_t> unranked;
  for (std::size_t i = 0; i < j; ++i)
    if (!is_ranked[i]) unranked.push_back(i);

  CounterRng rng({seed, 0x6f7261636c65ULL});
  std::size_t hits = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    bool ok = true;
    // Draws are consumed lazily; the event fails at the first violated inequality.
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t r : ranked) {
      const double u = w[r] + rng.gumbel();
      if (!(u > 0.0 && u < prev)) {
        ok = false;
        break;
      }
      prev = u;
    }
    if (ok) {
      for (std::size_t l : unranked) {
        if (w[l] + rng.gumbel() > 0.0) {
          ok = false;
          break;
        }
      }
    }
    hits += ok;
  }
  return finish(hits, draws);
}

McEstimate listing_mc(double w, std::size_t draws, std::uint64_t seed) {
  require_draws(draws);
  CounterRng rng({seed, 0x6c697374ULL});
  std::size_t hits = 0;
  for (std::size_t d = 0; d < draws; ++d) hits += (w + rng.gumbel() > 0.0);
  return finish(hits, draws);
}

McEstimate rol_length_mc(std::span<const double> w, std::size_t draws, std::uint64_t seed) {
  require_draws(draws);
  CounterRng rng({seed, 0x6c656e677468ULL});
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    double len = 0.0;
    for (double x : w) len += (x + rng.gumbel() > 0.0);
    sum += len;
    sum2 += len * len;
  }
  const double n = static_cast<double>(draws);
  McEstimate out;
  out.draws = draws;
  out.estimate = sum / n;
  out.std_error = std::sqrt(std::max(sum2 / n - out.estimate * out.estimate, 0.0) / n);
  return out;
}

}  // namespace trom::oracle
