#pragma once

// Core domain types of the threshold rank-order model: students choosing
// from a set of schools, their submitted rank-ordered lists, and the
// deterministic net utility index that drives the listing decision.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace trom {

using SchoolId = std::int64_t;
using StudentId = std::int64_t;

/// Thrown when input data breaks a model invariant.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered prefix of strictly preferred schools; position 0 is the top choice.
struct RankOrderedList {
  std::vector<SchoolId> ranked;

  std::size_t length() const { return ranked.size(); }
  bool empty() const { return ranked.empty(); }
};

/// One student's choice problem.
///
/// `pair_covariates` has one row per school in `schools` (same order) and one
/// column per pair covariate. `ranked_index` holds the positions of the ROL
/// entries inside `schools` and is filled by ChoiceDataset::validate().
struct Student {
  StudentId id = 0;
  std::vector<SchoolId> schools;
  Eigen::MatrixXd pair_covariates;
  Eigen::VectorXd student_covariates;
  std::vector<double> admit_prob;
  double outside_value = 0.0;
  RankOrderedList rol;

  std::vector<std::size_t> ranked_index;
  std::vector<std::size_t> unranked_index;

  std::size_t choice_set_size() const { return schools.size(); }
};

struct ChoiceDataset {
  std::vector<std::string> pair_covariate_names;
  std::vector<std::string> student_covariate_names;
  std::vector<Student> students;

  std::size_t n_students() const { return students.size(); }
  std::size_t n_pair_covariates() const { return pair_covariate_names.size(); }
  std::size_t n_student_covariates() const { return student_covariate_names.size(); }

  /// Checks every invariant and rebuilds the per-student ROL index tables.
  /// Throws DataError naming the offending student.
  void validate();

  /// Number of students with at least one ranked school.
  std::size_t n_ranking_students() const;
};

struct ThresholdParams {
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  double sigma2 = 1.0;
  bool has_latent = false;

  /// Free parameters counted by AIC.
  std::size_t n_free() const {
    return static_cast<std::size_t>(beta.size()) +
           (has_latent ? static_cast<std::size_t>(gamma.size()) + 1 : 0);
  }
  void check(const ChoiceDataset& data) const;
};

/// Deterministic net utilities over one student's choice set:
/// w_j = X_ij beta - c / p_j - u_0. The listing threshold is normalized to 0.
struct NetUtilityIndex {
  std::vector<double> w;

  std::size_t size() const { return w.size(); }
  double operator[](std::size_t j) const { return w[j]; }
};

/// F(-w) = exp(-exp(w)), the probability that a Type-1 extreme value error
/// stays below -w.
double ev_cdf_neg(double w);

/// log F(-w) = -exp(w), evaluated without forming the outer exponential.
double log_ev_cdf_neg(double w);

/// Net utility index of `student` at the given latent cost draw.
NetUtilityIndex net_utility(const Student& student, const Eigen::VectorXd& beta,
                            double latent_cost);
NetUtilityIndex net_utility(const ChoiceDataset& data, std::size_t student,
                            const ThresholdParams& params, double latent_cost);

/// Writes X_i beta into `out` (one entry per school).
void linear_index(const Student& student, const Eigen::VectorXd& beta,
                  std::vector<double>& out);

}  // namespace trom
