#pragma once

// Synthetic data for the two published simulation designs and a Monte Carlo
// study harness that summarizes estimator error across replications.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "trom/estimation.hpp"
#include "trom/model.hpp"

namespace trom {

struct LatentDesign {
  Eigen::VectorXd gamma;
  double sigma2 = 0.25;
};

struct SimDesign {
  std::size_t n = 1000;
  std::size_t j = 15;
  Eigen::VectorXd beta;
  std::vector<std::pair<double, double>> covariate_ranges;  // uniform bounds per covariate
  std::optional<LatentDesign> latent;
  std::size_t reps = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Four covariates, X1, X2 ~ U[-3,1], X3 ~ U[-1,3], X4 ~ U[-1,2],
/// beta = (0.5, 0.8, -0.9, -0.8), 15 schools, no latent cost.
SimDesign no_latent_design(std::size_t n = 1000);

/// Four covariates ~ U[-3,3], beta = (0.8, 0.4, -0.8, -0.9), one standard
/// normal student covariate with gamma = 0.5, sigma2 = 0.25, 10 schools.
SimDesign latent_design(std::size_t n = 1000);

struct SimulatedData {
  ChoiceDataset data;
  Eigen::MatrixXd eps;           // student x school extreme value draws
  Eigen::MatrixXd net_utility;   // student x school deterministic w_ij
  Eigen::VectorXd latent_cost;   // c_i (zero without latent cost)
};

SimulatedData gen_no_latent(const SimDesign& design, std::size_t rep);
SimulatedData gen_latent(const SimDesign& design, std::size_t rep);
/// Dispatches on design.latent.
SimulatedData generate(const SimDesign& design, std::size_t rep);

struct ErrorRow {
  std::size_t n = 0;
  std::size_t j = 0;
  std::string parameter;
  double true_value = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  double median_bias = 0.0;
  double mean_bias = 0.0;
  std::optional<double> mse_second;  // paired estimator, when compared
};

struct ErrorTable {
  std::vector<ErrorRow> rows;
  std::vector<double> seconds_per_rep;
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::size_t empty_list_students = 0;  // summed over replications

  const ErrorRow& row(const std::string& parameter) const;
};

/// Error summaries of `estimates` (rep x parameter) against `truth`.
std::vector<ErrorRow> summarize_errors(const Eigen::MatrixXd& estimates,
                                       const Eigen::VectorXd& truth,
                                       const std::vector<std::string>& names, std::size_t n,
                                       std::size_t j);

struct StudyConfig {
  MleConfig mle{};
  EmConfig em{};
  std::size_t threads = 1;
};

/// Generate, fit and summarize `design.reps` replications. The threshold
/// estimator fits by EM when the design carries a latent cost.
ErrorTable mc_study(const SimDesign& design, Estimator estimator, const StudyConfig& cfg);

/// Both estimators on the same replications; mse_second holds the urn MSE.
ErrorTable compare_study(const SimDesign& design, const StudyConfig& cfg);

/// N,s,beta,MSE,MAE,median_bias,mean_bias (or N,s,beta,MSE_recursive,MSE_urn
/// when paired), 17 significant digits.
void write_error_table(std::ostream& os, const ErrorTable& table);

}  // namespace trom
