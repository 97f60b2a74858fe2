#pragma once

// Independent reference evaluations of the ranked-list probability, used only
// to check the closed-form recursion. Neither routine shares code with it.

#include <cstddef>
#include <cstdint>
#include <span>

namespace trom::oracle {

/// P(U_1 > ... > U_K > 0) by nested adaptive Gauss-Kronrod quadrature of the
/// K-fold integral over the extreme value errors. K must be 1, 2 or 3.
double prob_quadrature(std::span<const double> w_ranked);

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t hits = 0;
  std::size_t draws = 0;
};

/// Frequency of the ROL event (ranked block in order above zero, every other
/// school below zero) under iid Type-1 extreme value draws. The binomial
/// standard error uses (hits + 1/2) / (draws + 1) so it stays positive when no
/// draw hits. Requires draws >= 10^4.
McEstimate prob_mc(std::span<const double> w, std::span<const std::size_t> ranked,
                   std::size_t draws, std::uint64_t seed);

/// Fraction of draws with w + eps > 0.
McEstimate listing_mc(double w, std::size_t draws, std::uint64_t seed);

/// Mean number of schools with w_j + eps_j > 0, with its standard error.
McEstimate rol_length_mc(std::span<const double> w, std::size_t draws, std::uint64_t seed);

}  // namespace trom::oracle
