#include "trom/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "trom/likelihood.hpp"

namespace trom {

double listing_prob(double w) {
  if (std::isnan(w)) throw std::domain_error("listing_prob: NaN utility");
  if (w == -std::numeric_limits<double>::infinity()) return 0.0;
  return -std::expm1(-std::exp(w));
}

double expected_rol_length(const NetUtilityIndex& w) {
  double s = 0.0;
  for (double x : w.w) s += listing_prob(x);
  return s;
}

double plug_in_cost(const Student& s, const ThresholdParams& params) {
  if (!params.has_latent || params.gamma.size() == 0) return 0.0;
  return s.student_covariates.dot(params.gamma);
}

std::map<SchoolId, double> school_popularity(const ChoiceDataset& data,
                                             const ThresholdParams& params,
                                             Estimator estimator) {
  if (estimator == Estimator::urn)
    throw std::invalid_argument(
        "school popularity is unsupported for the urn model: every school is listed with "
        "probability one");
  params.check(data);
  std::map<SchoolId, double> pop;
  for (const auto& s : data.students) {
    const NetUtilityIndex w = net_utility(s, params.beta, plug_in_cost(s, params));
    for (std::size_t k = 0; k < w.size(); ++k) pop[s.schools[k]] += listing_prob(w[k]);
  }
  return pop;
}

std::vector<std::size_t> predicted_order(const NetUtilityIndex& w, const PredictMode& mode) {
  std::vector<std::size_t> idx(w.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  if (mode.kind == PredictMode::Kind::top_k) {
    if (idx.size() > mode.k) idx.resize(mode.k);
    return idx;
  }
  if (mode.filter) {
    std::erase_if(idx, [&](std::size_t j) { return listing_prob(w[j]) < mode.tau; });
  }
  return idx;
}

RankOrderedList predicted_rol(const Student& s, const NetUtilityIndex& w, const PredictMode& mode) {
  RankOrderedList out;
  for (std::size_t j : predicted_order(w, mode)) out.ranked.push_back(s.schools[j]);
  return out;
}

ThresholdParams unflatten(const Eigen::VectorXd& v, const ThresholdParams& like) {
  ThresholdParams p = like;
  const Eigen::Index nb = like.beta.size();
  p.beta = v.head(nb);
  if (like.has_latent) {
    const Eigen::Index ng = like.gamma.size();
    p.gamma = v.segment(nb, ng);
    p.sigma2 = v[nb + ng];
  }
  return p;
}

namespace {

std::size_t find_name(const std::vector<std::string>& names, const std::string& name,
                      const char* kind) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument(std::string("unknown ") + kind + " '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

struct Profile {
  Eigen::VectorXd x;
};

}  // namespace

std::vector<MarginPoint> margin_grid(const ChoiceDataset& data, const ThresholdParams& params,
                                     const MarginSpec& spec, const Eigen::MatrixXd* replicates) {
  params.check(data);
  if (spec.grid.empty()) throw std::invalid_argument("margin_grid: empty grid");
  for (std::size_t g = 1; g < spec.grid.size(); ++g)
    if (!(spec.grid[g] > spec.grid[g - 1]))
      throw std::invalid_argument("margin_grid: grid must be strictly increasing");
  const std::size_t vary = find_name(data.pair_covariate_names, spec.varying, "covariate");

  // Sample means over every (student, school) cell.
  const auto p = static_cast<Eigen::Index>(data.n_pair_covariates());
  const auto q = static_cast<Eigen::Index>(data.n_student_covariates());
  Eigen::VectorXd x_mean = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd z_mean = Eigen::VectorXd::Zero(q);
  double u0_mean = 0.0, p_mean = 0.0, cells = 0.0;
  for (const auto& s : data.students) {
    x_mean += s.pair_covariates.colwise().sum().transpose();
    z_mean += s.student_covariates;
    u0_mean += s.outside_value;
    for (double pr : s.admit_prob) p_mean += pr;
    cells += static_cast<double>(s.schools.size());
  }
  const double ns = static_cast<double>(std::max<std::size_t>(data.n_students(), 1));
  if (cells > 0) {
    x_mean /= cells;
    p_mean /= cells;
  } else {
    p_mean = 1.0;
  }
  z_mean /= ns;
  u0_mean /= ns;

  Eigen::VectorXd z = z_mean;
  for (const auto& [name, value] : spec.student_fixed)
    z[static_cast<Eigen::Index>(find_name(data.student_covariate_names, name, "student covariate"))] =
        value;
  const double u0 = spec.outside_value.value_or(u0_mean);
  const double admit = spec.admit_prob.value_or(p_mean);
  if (!(admit > 0.0)) throw std::invalid_argument("margin_grid: admit_prob must be positive");

  auto profile_x = [&](const MarginProfile& prof) {
    Eigen::VectorXd x = x_mean;
    for (const auto& [name, value] : prof.fixed)
      x[static_cast<Eigen::Index>(find_name(data.pair_covariate_names, name, "covariate"))] = value;
    return x;
  };

  auto evaluate = [&](const ThresholdParams& th, const Eigen::VectorXd& x_hi,
                      const Eigen::VectorXd* x_lo) {
    const double c = th.has_latent ? z.dot(th.gamma) : 0.0;
    const double w_hi = x_hi.dot(th.beta) - c / admit - u0;
    if (!x_lo) return listing_prob(w_hi);
    const double w_lo = x_lo->dot(th.beta) - c / admit - u0;
    return pairwise_rank_prob(w_hi, w_lo);
  };

  std::vector<MarginPoint> out;
  const Eigen::VectorXd low_base =
      spec.low_profile ? profile_x(*spec.low_profile) : Eigen::VectorXd();
  for (const auto& prof : spec.profiles) {
    const Eigen::VectorXd base = profile_x(prof);
    for (double value : spec.grid) {
      Eigen::VectorXd x = base;
      x[static_cast<Eigen::Index>(vary)] = value;
      Eigen::VectorXd x_lo = low_base;
      if (spec.low_profile) x_lo[static_cast<Eigen::Index>(vary)] = value;
      const Eigen::VectorXd* lo_ptr = spec.low_profile ? &x_lo : nullptr;

      MarginPoint pt;
      pt.profile = prof.label;
      pt.value = value;
      pt.prob = evaluate(params, x, lo_ptr);
      if (replicates && replicates->rows() > 0) {
        std::vector<double> draws;
        draws.reserve(static_cast<std::size_t>(replicates->rows()));
        for (Eigen::Index r = 0; r < replicates->rows(); ++r)
          draws.push_back(evaluate(unflatten(replicates->row(r).transpose(), params), x, lo_ptr));
        const auto [lo, hi] = percentile_interval(std::move(draws), spec.level);
        pt.lo = lo;
        pt.hi = hi;
      }
      out.push_back(pt);
    }
  }
  return out;
}

}  // namespace trom
