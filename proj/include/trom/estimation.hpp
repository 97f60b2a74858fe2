#pragma once

// Parameter estimation for the threshold rank-order model: multi-start
// maximum likelihood without latent cost, Monte Carlo EM with a correlated
// latent cost c_i = Z_i gamma + w_i, w_i ~ N(0, sigma2), and percentile
// bootstrap intervals.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trom/model.hpp"
#include "trom/optimizer.hpp"

namespace trom {

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitResult {
  ThresholdParams params;
  double loglik = 0.0;
  double aic = 0.0;
  bool converged = false;
  int iterations = 0;
  int starts_tried = 0;
  std::vector<std::string> notes;
};

double aic(double loglik, std::size_t n_free);

struct MleConfig {
  int starts = 5;
  double start_lo = -1.0;
  double start_hi = 1.0;
  std::uint64_t seed = 1;
  /// Optional extra start tried before the random ones.
  std::optional<Eigen::VectorXd> initial;
  optim::Options optim{};
};

enum class Estimator { threshold, urn };

/// Sum over students of log g(L_i | beta) with zero latent cost.
double threshold_loglik(const ChoiceDataset& data, const Eigen::VectorXd& beta);

/// Sum over students with K >= 1 of the marginalized urn log-likelihood.
double urn_loglik(const ChoiceDataset& data, const Eigen::VectorXd& beta);

/// Throws EstimationError when a pair covariate is constant over every
/// (student, school) cell.
void check_rank(const ChoiceDataset& data);

FitResult fit_mle(const ChoiceDataset& data, const MleConfig& cfg);

/// Maximum likelihood for the urn baseline. Students with an empty list carry
/// no information under it and are skipped; the count goes to `notes`.
FitResult fit_urn(const ChoiceDataset& data, const MleConfig& cfg);

// ---------------------------------------------------------------------------
// Monte Carlo EM

struct EmConfig {
  std::size_t draws = 500;  // T
  double tol = 1e-4;        // on max |delta theta|
  int max_iter = 200;
  std::uint64_t seed = 1;
  double sigma2_floor = 1e-8;
  /// Starting point; unset entries are drawn from U[start_lo, start_hi].
  std::optional<ThresholdParams> initial;
  double start_lo = -1.0;
  double start_hi = 1.0;
  double sigma2_start = 0.5;
  /// Reject a (gamma, sigma2) update that lowers the simulated observed-data
  /// log-likelihood, shrinking it towards the previous value.
  bool monotone_guard = true;
  optim::Options m_step{.grad_tol = 1e-6, .max_iter = 100};
};

struct EmIteration {
  int iter = 0;
  double observed_loglik = 0.0;  // at the parameters entering the iteration
  double delta = 0.0;
  double guard_shrink = 1.0;     // fraction of the (gamma, sigma2) step kept
  ThresholdParams params;        // after the update
};

struct EMState {
  int iter = 0;
  ThresholdParams params;
  std::size_t draws = 0;
  Eigen::MatrixXd weights;       // student x draw, rows sum to one
  Eigen::MatrixXd latent_draws;  // c_it at the current parameters
  double delta = 0.0;
};

struct EmFitResult {
  FitResult fit;
  EMState state;
  std::vector<EmIteration> trace;
};

/// Standard normal innovations e_it reused by every EM iteration;
/// c_it = Z_i gamma + sigma e_it.
Eigen::MatrixXd common_random_numbers(std::size_t n_students, std::size_t draws,
                                      std::uint64_t seed);

/// Simulated observed-data log-likelihood sum_i log (1/T) sum_t g(L_i | c_it; beta).
double simulated_loglik(const ChoiceDataset& data, const ThresholdParams& params,
                        const Eigen::MatrixXd& innovations);

/// gamma = (sum z_i z_i')^{-1} sum z_i sum_t w_it c_it.
Eigen::VectorXd update_gamma(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& draws,
                             const Eigen::MatrixXd& z);

/// sigma2 = (1/n) sum_i sum_t w_it (c_it - z_i gamma)^2.
double update_sigma2(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& draws,
                     const Eigen::MatrixXd& z, const Eigen::VectorXd& gamma);

/// Student covariates stacked as an n x q matrix.
Eigen::MatrixXd student_covariate_matrix(const ChoiceDataset& data);

EmFitResult em_fit(const ChoiceDataset& data, const EmConfig& cfg);

// ---------------------------------------------------------------------------
// Bootstrap

struct Interval {
  std::string name;
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct BootstrapResult {
  std::vector<Interval> intervals;
  Eigen::MatrixXd replicates;  // kept replicate x parameter
  std::size_t requested = 0;
  std::size_t dropped = 0;
};

using Refit = std::function<FitResult(const ChoiceDataset&)>;

/// Flattened parameter vector (beta, then gamma and sigma2 when latent) and names.
Eigen::VectorXd flatten(const ThresholdParams& p);
std::vector<std::string> parameter_names(const ChoiceDataset& data, bool latent);

/// Resamples students with replacement (replicate b uses stream (seed, b)).
ChoiceDataset resample_students(const ChoiceDataset& data, std::uint64_t seed, std::size_t b);

/// Percentile interval bounds at the ceil(B a/2)-th and ceil(B (1 - a/2))-th
/// order statistics, a = 1 - level.
std::pair<double, double> percentile_interval(std::vector<double> values, double level);

BootstrapResult bootstrap_ci(const ChoiceDataset& data, const FitResult& point,
                             const Refit& refit, std::size_t replicates, double level,
                             std::uint64_t seed, std::size_t threads = 1);

}  // namespace trom
