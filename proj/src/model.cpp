#include "trom/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace trom {

namespace {

std::string student_tag(const Student& s) {
  return "student " + std::to_string(s.id);
}

}  // namespace

double ev_cdf_neg(double w) {
  if (!std::isfinite(w)) throw std::domain_error("ev_cdf_neg: non-finite argument");
  return std::exp(-std::exp(w));
}

double log_ev_cdf_neg(double w) {
  if (!std::isfinite(w)) throw std::domain_error("log_ev_cdf_neg: non-finite argument");
  return -std::exp(w);
}

void ChoiceDataset::validate() {
  const auto p = static_cast<Eigen::Index>(n_pair_covariates());
  const auto q = static_cast<Eigen::Index>(n_student_covariates());
  for (auto& s : students) {
    const std::size_t j = s.schools.size();
    if (s.pair_covariates.rows() != static_cast<Eigen::Index>(j) ||
        s.pair_covariates.cols() != p)
      throw DataError(student_tag(s) + ": pair covariate block has wrong shape");
    if (!s.pair_covariates.allFinite())
      throw DataError(student_tag(s) + ": non-finite pair covariate");
    if (s.student_covariates.size() != q)
      throw DataError(student_tag(s) + ": wrong number of student covariates");
    if (!s.student_covariates.allFinite())
      throw DataError(student_tag(s) + ": non-finite student covariate");
    if (!std::isfinite(s.outside_value))
      throw DataError(student_tag(s) + ": non-finite outside value");
    if (s.admit_prob.size() != j)
      throw DataError(student_tag(s) + ": admit_prob size mismatch");
    for (std::size_t k = 0; k < j; ++k) {
      const double pr = s.admit_prob[k];
      if (!(pr > 0.0 && pr <= 1.0))
        throw DataError(student_tag(s) + ", school " + std::to_string(s.schools[k]) +
                        ": admit_prob must lie in (0,1]");
    }

    std::unordered_map<SchoolId, std::size_t> pos;
    pos.reserve(j);
    for (std::size_t k = 0; k < j; ++k) {
      if (!pos.emplace(s.schools[k], k).second)
        throw DataError(student_tag(s) + ": school " + std::to_string(s.schools[k]) +
                        " appears twice in the choice set");
    }
    if (s.rol.length() > j)
      throw DataError(student_tag(s) + ": ROL longer than the choice set");

    s.ranked_index.clear();
    std::vector<char> used(j, 0);
    for (SchoolId id : s.rol.ranked) {
      auto it = pos.find(id);
      if (it == pos.end())
        throw DataError(student_tag(s) + ": ranked school " + std::to_string(id) +
                        " is not in the choice set");
      if (used[it->second])
        throw DataError(student_tag(s) + ": school " + std::to_string(id) +
                        " ranked twice");
      used[it->second] = 1;
      s.ranked_index.push_back(it->second);
    }
    s.unranked_index.clear();
    for (std::size_t k = 0; k < j; ++k)
      if (!used[k]) s.unranked_index.push_back(k);
  }
}

std::size_t ChoiceDataset::n_ranking_students() const {
  return static_cast<std::size_t>(std::count_if(
      students.begin(), students.end(), [](const Student& s) { return !s.rol.empty(); }));
}

void ThresholdParams::check(const ChoiceDataset& data) const {
  if (static_cast<std::size_t>(beta.size()) != data.n_pair_covariates())
    throw std::invalid_argument("beta length does not match the pair covariate count");
  if (has_latent) {
    if (static_cast<std::size_t>(gamma.size()) != data.n_student_covariates())
      throw std::invalid_argument("gamma length does not match the student covariate count");
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  }
}

void linear_index(const Student& student, const Eigen::VectorXd& beta,
                  std::vector<double>& out) {
  const auto j = student.pair_covariates.rows();
  out.resize(static_cast<std::size_t>(j));
  Eigen::Map<Eigen::VectorXd>(out.data(), j).noalias() = student.pair_covariates * beta;
}

NetUtilityIndex net_utility(const Student& student, const Eigen::VectorXd& beta,
                            double latent_cost) {
  if (!std::isfinite(latent_cost))
    throw std::domain_error("net_utility: non-finite latent cost");
  NetUtilityIndex idx;
  linear_index(student, beta, idx.w);
  for (std::size_t k = 0; k < idx.w.size(); ++k) {
    const double pr = student.admit_prob[k];
    if (pr == 0.0) {
      std::ostringstream os;
      os << "net_utility: zero admission probability for student " << student.id
         << ", school " << student.schools[k];
      throw std::domain_error(os.str());
    }
    idx.w[k] -= latent_cost / pr + student.outside_value;
  }
  return idx;
}

NetUtilityIndex net_utility(const ChoiceDataset& data, std::size_t student,
                            const ThresholdParams& params, double latent_cost) {
  return net_utility(data.students.at(student), params.beta, latent_cost);
}

}  // namespace trom
