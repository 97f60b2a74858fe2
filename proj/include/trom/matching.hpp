#pragma once

// Student-proposing Deferred Acceptance with priorities and lottery
// tie-breaking, the outside-option fallback rule, the Duncan dissimilarity
// index, and the no-travel-cost counterfactual pipeline.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trom/model.hpp"
#include "trom/prediction.hpp"

namespace trom {

inline constexpr double kFallbackRadiusKm = 17.0;

enum class Group : std::uint8_t { low = 0, high = 1 };

struct MarketSchool {
  SchoolId id = 0;
  int capacity = 0;
  bool is_public = false;
  double score = 0.0;
  double x = 0.0, y = 0.0;
};

struct PublicCandidate {
  SchoolId school = 0;
  double distance_km = 0.0;
};

struct MarketStudent {
  StudentId id = 0;
  std::vector<SchoolId> rol;
  Group group = Group::low;
  std::optional<SchoolId> guaranteed;
  double x = 0.0, y = 0.0;
  std::vector<PublicCandidate> public_candidates;
};

struct Market {
  std::vector<MarketSchool> schools;
  std::vector<MarketStudent> students;
  /// student x school, indexed by position in the vectors above.
  std::vector<std::vector<std::uint8_t>> priority;
  std::vector<std::vector<double>> lottery;

  std::size_t school_index(SchoolId id) const;  // throws if unknown
  void validate() const;

  /// Fresh uniform lottery from stream (seed, student id, school id); no priorities
  /// unless already set.
  void draw_lottery(std::uint64_t seed);

  /// Fills each student's public candidates from Euclidean distances to public schools.
  void public_candidates_from_locations();
};

enum class Via : std::uint8_t { rol, guaranteed, nearest_public, unassigned };
const char* to_string(Via v);

struct Assignment {
  std::vector<std::optional<SchoolId>> match;  // per market student
  std::vector<Via> via;
  std::vector<int> rank_position;             // 1-based ROL position, 0 otherwise
  std::size_t rounds = 0;
};

/// Round-synchronous student-proposing DA. Schools rank proposers by
/// (priority, lower lottery value).
Assignment run_da(const Market& market);

/// Students unmatched through their ROL go to their guaranteed school when
/// they have one, else to the nearest public candidate with residual DA
/// vacancy within 17 km (inclusive), processed in ascending student id.
/// Guaranteed seats are the student's existing place and draw on no vacancy.
Assignment fallback_assign(const Assignment& da, const Market& market);

/// Checks capacities, ROL consistency and fallback vacancy use; returns a
/// list of violations (empty when the assignment is valid).
std::vector<std::string> check_assignment(const Assignment& a, const Market& market);

/// Students who prefer a school to their match while that school holds a
/// lower-ordered student or has a free seat. Brute force, for verification.
std::vector<std::pair<std::size_t, std::size_t>> blocking_pairs(const Market& market,
                                                                const Assignment& a);

/// D = 1/2 sum_j |low_j / N_low - high_j / N_high|.
double duncan_index(const std::vector<double>& low_counts, const std::vector<double>& high_counts);
double duncan_index(const Assignment& a, const Market& market);

struct CovariateEdit {
  std::string covariate;
  double value = 0.0;
  std::optional<Group> only_group;  // all students when empty
};

struct CounterfactualResult {
  double baseline = 0.0;
  double counterfactual = 0.0;
  Assignment baseline_assignment;
  Assignment counterfactual_assignment;
};

/// Replaces each market student's ROL by the predicted list under `params`.
/// Students are matched to dataset students by id.
Market with_predicted_rols(const Market& market, const ChoiceDataset& data,
                           const ThresholdParams& params, const PredictMode& mode);

ChoiceDataset apply_edit(const ChoiceDataset& data, const Market& market, const CovariateEdit& edit);

/// Predict, match and measure segregation before and after the edit, with one
/// shared lottery.
CounterfactualResult counterfactual_run(const ChoiceDataset& data, const ThresholdParams& params,
                                        const CovariateEdit& edit, const Market& market_template,
                                        const PredictMode& mode = {});

}  // namespace trom
