#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "trom/matching.hpp"
#include "trom/model.hpp"

namespace fixtures {

// Schools are numbered 1..J in row order of `x`.
inline trom::Student student(trom::StudentId id, const Eigen::MatrixXd& x,
                             std::vector<trom::SchoolId> rol, double admit = 1.0,
                             double outside = 0.0, Eigen::VectorXd z = Eigen::VectorXd()) {
  trom::Student s;
  s.id = id;
  s.pair_covariates = x;
  for (Eigen::Index j = 0; j < x.rows(); ++j) s.schools.push_back(j + 1);
  s.admit_prob.assign(static_cast<std::size_t>(x.rows()), admit);
  s.outside_value = outside;
  s.student_covariates = z;
  s.rol.ranked = std::move(rol);
  return s;
}

inline trom::ChoiceDataset dataset(std::vector<trom::Student> students, std::size_t p,
                                   std::size_t q = 0) {
  trom::ChoiceDataset d;
  for (std::size_t k = 0; k < p; ++k) d.pair_covariate_names.push_back("x" + std::to_string(k + 1));
  for (std::size_t k = 0; k < q; ++k) d.student_covariate_names.push_back("z" + std::to_string(k + 1));
  d.students = std::move(students);
  d.validate();
  return d;
}

// Market with ids 1.. for both sides, zero priorities and a lottery from `seed`.
inline trom::Market market(const std::vector<int>& capacities,
                           const std::vector<std::vector<trom::SchoolId>>& rols,
                           std::uint64_t seed = 1) {
  trom::Market m;
  for (std::size_t j = 0; j < capacities.size(); ++j)
    m.schools.push_back({static_cast<trom::SchoolId>(j + 1), capacities[j], false, 0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < rols.size(); ++i) {
    trom::MarketStudent s;
    s.id = static_cast<trom::StudentId>(i + 1);
    s.rol = rols[i];
    m.students.push_back(s);
  }
  m.draw_lottery(seed);
  return m;
}

}  // namespace fixtures
