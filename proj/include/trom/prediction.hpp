#pragma once

// Post-estimation quantities derived from a fitted threshold model.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trom/estimation.hpp"
#include "trom/model.hpp"

namespace trom {

/// 1 - F(-w): probability that a school clears the listing threshold.
double listing_prob(double w);

/// Expected number of listed schools, sum_j listing_prob(w_j).
double expected_rol_length(const NetUtilityIndex& w);

/// Latent cost used for prediction: Z_i gamma when the model has one, else 0.
double plug_in_cost(const Student& s, const ThresholdParams& params);

/// Expected number of students listing each school, sum_i listing_prob(w_ij).
/// Throws for the urn estimator, under which every school is always listed.
std::map<SchoolId, double> school_popularity(const ChoiceDataset& data,
                                             const ThresholdParams& params,
                                             Estimator estimator = Estimator::threshold);

struct PredictMode {
  enum class Kind { threshold, top_k } kind = Kind::threshold;
  double tau = 0.5;   // minimum listing probability under Kind::threshold
  std::size_t k = 0;  // list length under Kind::top_k
  /// Disables the tau filter (pure argsort on w).
  bool filter = true;
};

/// Positions into w of the predicted ROL, ordered by w descending.
std::vector<std::size_t> predicted_order(const NetUtilityIndex& w, const PredictMode& mode);
RankOrderedList predicted_rol(const Student& s, const NetUtilityIndex& w, const PredictMode& mode);

struct MarginProfile {
  std::string label;
  std::map<std::string, double> fixed;  // pair covariate overrides
};

struct MarginSpec {
  std::string varying;
  std::vector<double> grid;
  std::vector<MarginProfile> profiles{MarginProfile{}};
  /// When set, the quantity is pairwise_rank_prob(profile, low_profile)
  /// rather than listing_prob(profile).
  std::optional<MarginProfile> low_profile;
  std::map<std::string, double> student_fixed;  // student covariate overrides
  std::optional<double> outside_value;
  std::optional<double> admit_prob;
  double level = 0.90;
};

struct MarginPoint {
  std::string profile;
  double value = 0.0;
  double prob = 0.0;
  std::optional<double> lo, hi;
};

/// Probability along the grid with other covariates at their sample means
/// unless overridden. `replicates` (rows of flattened parameters, e.g. from
/// bootstrap_ci) adds percentile bands.
std::vector<MarginPoint> margin_grid(const ChoiceDataset& data, const ThresholdParams& params,
                                     const MarginSpec& spec,
                                     const Eigen::MatrixXd* replicates = nullptr);

/// Rebuilds parameters from a flattened vector shaped like `like`.
ThresholdParams unflatten(const Eigen::VectorXd& v, const ThresholdParams& like);

}  // namespace trom
