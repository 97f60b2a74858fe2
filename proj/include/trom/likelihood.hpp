#pragma once

// Probability of an observed partial rank-ordered list under the one-step
// threshold model, plus the Plackett-Luce (urn) baselines.
//
// With U_j = w_j + eps_j and eps_j iid Type-1 extreme value, the ranked block
// probability I(K) = P(U_1 > ... > U_K > 0) follows the recursion
//
//   I(n) = PL(1..n) (1 - prod_{j<=n} F_j) - sum_{m<n} PL(m+1..n) prod_{m<j<=n} F_j I(m)
//
// where PL(a..n) is the Plackett-Luce probability of the order a > ... > n and
// F_j = F(-w_j). The non-ranked schools contribute prod_l F(-w_l).

#include <cstddef>
#include <span>
#include <vector>

#include "trom/model.hpp"

namespace trom {

/// Intermediate quantities of the recursion, for inspection and tests.
/// kappa[m] = exp(w_m) / sum_{j>=m} exp(w_j) over the full ranked block,
/// f_neg[j] = F(-w_j), memo[k-1] = I(k).
struct OrderedProbTerms {
  std::vector<double> kappa;
  std::vector<double> f_neg;
  std::vector<double> memo;
};

/// Reusable scratch buffers for hot loops.
struct RecursionWorkspace {
  std::vector<long double> ew, f, e, memo, prefix;
};

/// I(K) for utilities given in claimed preference order. Requires K >= 1.
double ordered_threshold_prob(std::span<const double> w_ranked);
double log_ordered_threshold_prob(std::span<const double> w_ranked);
double log_ordered_threshold_prob(std::span<const double> w_ranked, RecursionWorkspace& ws);
OrderedProbTerms ordered_threshold_terms(std::span<const double> w_ranked);

/// log I(K) through the equivalent exponential-race form
/// I(K) = PL(1..K) P(tau_1 + ... + tau_K <= 1), tau_m ~ Exp(sum_{j>=m} e^{w_j}),
/// summed by uniformization (positive terms only). Used when the recursion
/// cancels; requires sum_j e^{w_j} <= 700.
double log_ordered_threshold_prob_race(std::span<const double> w_ranked);

/// g(L | w) = I(K) prod_{non-ranked} F(-w_l). `ranked` holds positions into w.
double rol_likelihood(std::span<const double> w, std::span<const std::size_t> ranked);
double log_rol_likelihood(std::span<const double> w, std::span<const std::size_t> ranked);
double rol_likelihood(const NetUtilityIndex& w, const Student& student);
double log_rol_likelihood(const NetUtilityIndex& w, const Student& student);

/// Hot-path variant: the caller supplies both index blocks, already validated.
double log_rol_likelihood_unchecked(std::span<const double> w,
                                    std::span<const std::size_t> ranked,
                                    std::span<const std::size_t> unranked,
                                    RecursionWorkspace& ws);

/// log g(L | a - d) for many values of a common shift d, as when a latent cost
/// enters every school with the same admission probability. The Plackett-Luce
/// stage terms do not depend on d and are computed once per reset(); each
/// evaluation then runs in double precision. Shifts where the recursion
/// cancels are collected and served by one sweep of the race form over the
/// sorted time scales.
class ShiftedRolEvaluator {
 public:
  void reset(std::span<const double> a, std::span<const std::size_t> ranked,
             std::span<const std::size_t> unranked);
  double log_prob(double d);
  /// out[t] = log_prob(d[t]); d and out may alias.
  void log_probs(std::span<const double> d, std::span<double> out);

 private:
  struct Pending {
    double s, below, d;
    std::size_t slot;
  };
  double generic(double d);
  bool fast(double d, double& out);
  void sweep(std::span<double> out);
  void advance(double mu);

  std::size_t k_ = 0;
  bool fast_ = false;
  double amax_ = 0.0;
  double tail_ = 0.0;  // sum over non-ranked of exp(a_l - amax)
  std::vector<double> a_;
  std::vector<std::size_t> ranked_, unranked_;
  std::vector<double> e_;   // exp(a_ranked - amax), in list order
  std::vector<double> pl_;  // pl_[a * k + n - 1] = PL(a..n-1)
  double log_pl_ = 0.0;     // log PL(0..k-1)
  std::vector<double> rate_, adv_, stay_;  // race rates at unit scale
  std::vector<double> ew_, f_, memo_, w_, pi_, x_, acc_, upstream_;
  std::vector<Pending> pending_;
  double absorbed_ = 0.0;
  RecursionWorkspace ws_;
};

/// Plackett-Luce probability of a complete order.
double pl_likelihood(std::span<const double> w, std::span<const std::size_t> full_order);
double log_pl_likelihood(std::span<const double> w, std::span<const std::size_t> full_order);

/// Urn likelihood with the non-ranked tail marginalized over all its orders:
/// prod_m exp(w_(m)) / sum over items not yet chosen.
double partial_urn_likelihood(std::span<const double> w, std::span<const std::size_t> ranked);
double log_partial_urn_likelihood(std::span<const double> w,
                                  std::span<const std::size_t> ranked);

/// P(H > L > 0): both listed, H above L.
double pairwise_rank_prob(double w_high, double w_low);

}  // namespace trom
