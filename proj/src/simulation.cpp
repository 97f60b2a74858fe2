#include "trom/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "trom/parallel.hpp"
#include "trom/rng.hpp"

namespace trom {

namespace {

enum Purpose : std::uint64_t { kCovariate = 1, kEps = 2, kStudentCov = 3, kLatentNoise = 4 };

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

SimulatedData generate_impl(const SimDesign& d, std::size_t rep, bool latent) {
  d.validate();
  const std::size_t p = d.covariate_ranges.size();
  const std::size_t q = latent ? static_cast<std::size_t>(d.latent->gamma.size()) : 0;
  if (latent && d.latent->sigma2 < 0.0) throw std::invalid_argument("sigma2 must be >= 0");

  SimulatedData out;
  ChoiceDataset& data = out.data;
  for (std::size_t k = 0; k < p; ++k) data.pair_covariate_names.push_back("x" + std::to_string(k + 1));
  for (std::size_t k = 0; k < q; ++k) data.student_covariate_names.push_back("z" + std::to_string(k + 1));

  const auto n = static_cast<Eigen::Index>(d.n), j = static_cast<Eigen::Index>(d.j);
  out.eps.resize(n, j);
  out.net_utility.resize(n, j);
  out.latent_cost = Eigen::VectorXd::Zero(n);
  data.students.resize(d.n);

  std::vector<std::pair<double, SchoolId>> listed;
  for (std::size_t i = 0; i < d.n; ++i) {
    Student& s = data.students[i];
    s.id = static_cast<StudentId>(i + 1);
    s.pair_covariates.resize(j, static_cast<Eigen::Index>(p));
    s.student_covariates = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q));
    s.admit_prob.assign(d.j, 1.0);
    s.outside_value = 0.0;
    s.schools.resize(d.j);

    double cost = 0.0;
    if (latent) {
      for (std::size_t k = 0; k < q; ++k)
        s.student_covariates[static_cast<Eigen::Index>(k)] =
            CounterRng({d.seed, rep, i, kStudentCov, k}).normal();
      const double noise = CounterRng({d.seed, rep, i, kLatentNoise}).normal();
      cost = s.student_covariates.dot(d.latent->gamma) + std::sqrt(d.latent->sigma2) * noise;
    }
    out.latent_cost[static_cast<Eigen::Index>(i)] = cost;

    listed.clear();
    for (std::size_t c = 0; c < d.j; ++c) {
      s.schools[c] = static_cast<SchoolId>(c + 1);
      for (std::size_t k = 0; k < p; ++k) {
        const auto [lo, hi] = d.covariate_ranges[k];
        s.pair_covariates(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k)) =
            CounterRng({d.seed, rep, i, c, kCovariate, k}).uniform(lo, hi);
      }
      const double w = s.pair_covariates.row(static_cast<Eigen::Index>(c)).dot(d.beta) - cost;
      const double e = CounterRng({d.seed, rep, i, c, kEps}).gumbel();
      out.eps(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = e;
      out.net_utility(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = w;
      if (w + e > 0.0) listed.emplace_back(w + e, s.schools[c]);
    }
    std::sort(listed.begin(), listed.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    s.rol.ranked.clear();
    for (const auto& [u, id] : listed) s.rol.ranked.push_back(id);
  }
  data.validate();
  return out;
}

}  // namespace

void SimDesign::validate() const {
  if (reps < 1) throw std::invalid_argument("design: reps must be >= 1");
  if (j < 2) throw std::invalid_argument("design: need at least two schools");
  if (n < 1) throw std::invalid_argument("design: need at least one student");
  if (static_cast<std::size_t>(beta.size()) != covariate_ranges.size())
    throw std::invalid_argument("design: beta and covariate ranges differ in length");
  for (const auto& [lo, hi] : covariate_ranges)
    if (!(lo < hi)) throw std::invalid_argument("design: covariate bounds need lo < hi");
  if (latent && latent->gamma.size() < 1)
    throw std::invalid_argument("design: latent cost needs at least one student covariate");
}

SimDesign no_latent_design(std::size_t n) {
  SimDesign d;
  d.n = n;
  d.j = 15;
  d.beta = Eigen::Vector4d(0.5, 0.8, -0.9, -0.8);
  d.covariate_ranges = {{-3.0, 1.0}, {-3.0, 1.0}, {-1.0, 3.0}, {-1.0, 2.0}};
  return d;
}

SimDesign latent_design(std::size_t n) {
  SimDesign d;
  d.n = n;
  d.j = 10;
  d.beta = Eigen::Vector4d(0.8, 0.4, -0.8, -0.9);
  d.covariate_ranges = {{-3.0, 3.0}, {-3.0, 3.0}, {-3.0, 3.0}, {-3.0, 3.0}};
  d.latent = LatentDesign{Eigen::VectorXd::Constant(1, 0.5), 0.25};
  return d;
}

SimulatedData gen_no_latent(const SimDesign& design, std::size_t rep) {
  if (design.latent) throw std::invalid_argument("gen_no_latent: design carries a latent cost");
  return generate_impl(design, rep, false);
}

SimulatedData gen_latent(const SimDesign& design, std::size_t rep) {
  if (!design.latent) throw std::invalid_argument("gen_latent: design has no latent cost");
  return generate_impl(design, rep, true);
}

SimulatedData generate(const SimDesign& design, std::size_t rep) {
  return design.latent ? gen_latent(design, rep) : gen_no_latent(design, rep);
}

const ErrorRow& ErrorTable::row(const std::string& parameter) const {
  for (const auto& r : rows)
    if (r.parameter == parameter) return r;
  throw std::out_of_range("no error row for " + parameter);
}

std::vector<ErrorRow> summarize_errors(const Eigen::MatrixXd& estimates,
                                       const Eigen::VectorXd& truth,
                                       const std::vector<std::string>& names, std::size_t n,
                                       std::size_t j) {
  std::vector<ErrorRow> rows;
  for (Eigen::Index k = 0; k < estimates.cols(); ++k) {
    const Eigen::VectorXd err = estimates.col(k).array() - truth[k];
    ErrorRow r;
    r.n = n;
    r.j = j;
    r.parameter = names[static_cast<std::size_t>(k)];
    r.true_value = truth[k];
    r.mse = err.squaredNorm() / static_cast<double>(err.size());
    r.mae = err.cwiseAbs().mean();
    r.mean_bias = err.mean();
    r.median_bias = median(std::vector<double>(err.data(), err.data() + err.size()));
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

Eigen::VectorXd design_truth(const SimDesign& d) {
  if (!d.latent) return d.beta;
  Eigen::VectorXd t(d.beta.size() + d.latent->gamma.size() + 1);
  t << d.beta, d.latent->gamma, d.latent->sigma2;
  return t;
}

struct RepOutcome {
  Eigen::VectorXd first, second;
  bool ok = false;
  double seconds = 0.0;
  std::size_t empty_lists = 0;
};

FitResult fit_one(const ChoiceDataset& data, Estimator est, const StudyConfig& cfg,
                  std::uint64_t seed, bool latent) {
  if (est == Estimator::urn) {
    MleConfig m = cfg.mle;
    m.seed = seed;
    return fit_urn(data, m);
  }
  if (latent) {
    EmConfig e = cfg.em;
    e.seed = seed;
    return em_fit(data, e).fit;
  }
  MleConfig m = cfg.mle;
  m.seed = seed;
  return fit_mle(data, m);
}

ErrorTable run_study(const SimDesign& design, const std::vector<Estimator>& estimators,
                     const StudyConfig& cfg) {
  design.validate();
  if (design.reps < 2) throw std::invalid_argument("mc_study needs at least two replications");
  const bool latent = design.latent.has_value();
  if (latent && std::find(estimators.begin(), estimators.end(), Estimator::urn) != estimators.end())
    throw std::invalid_argument("urn comparison is defined for the design without latent cost");

  std::vector<RepOutcome> outcomes(design.reps);
  parallel_for(design.reps, cfg.threads, [&](std::size_t rep) {
    const auto t0 = std::chrono::steady_clock::now();
    RepOutcome& o = outcomes[rep];
    try {
      const SimulatedData sim = generate(design, rep);
      o.empty_lists = sim.data.n_students() - sim.data.n_ranking_students();
      const std::uint64_t seed = stream_key({design.seed, rep, 0x666974ULL});
      o.first = flatten(fit_one(sim.data, estimators[0], cfg, seed, latent).params);
      if (estimators.size() > 1)
        o.second = flatten(fit_one(sim.data, estimators[1], cfg, seed, latent).params);
      o.ok = true;
    } catch (const std::exception&) {
      o.ok = false;
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  ErrorTable table;
  table.reps = design.reps;
  std::vector<std::size_t> good;
  for (std::size_t r = 0; r < design.reps; ++r) {
    table.seconds_per_rep.push_back(outcomes[r].seconds);
    table.empty_list_students += outcomes[r].empty_lists;
    if (outcomes[r].ok)
      good.push_back(r);
    else
      ++table.failures;
  }
  if (static_cast<double>(table.failures) > 0.05 * static_cast<double>(design.reps))
    throw EstimationError("mc_study: " + std::to_string(table.failures) + " of " +
                          std::to_string(design.reps) + " replications failed");
  if (good.size() < 2) throw EstimationError("mc_study: fewer than two successful replications");

  const Eigen::VectorXd truth = design_truth(design);
  const auto dim = truth.size();
  Eigen::MatrixXd first(static_cast<Eigen::Index>(good.size()), dim);
  Eigen::MatrixXd second(static_cast<Eigen::Index>(good.size()), dim);
  for (std::size_t g = 0; g < good.size(); ++g) {
    first.row(static_cast<Eigen::Index>(g)) = outcomes[good[g]].first.transpose();
    if (estimators.size() > 1)
      second.row(static_cast<Eigen::Index>(g)) = outcomes[good[g]].second.transpose();
  }
  std::vector<std::string> names;
  for (Eigen::Index k = 0; k < design.beta.size(); ++k)
    names.push_back("beta_x" + std::to_string(k + 1));
  if (latent) {
    for (Eigen::Index k = 0; k < design.latent->gamma.size(); ++k)
      names.push_back("gamma_z" + std::to_string(k + 1));
    names.push_back("sigma2");
  }
  table.rows = summarize_errors(first, truth, names, design.n, design.j);
  if (estimators.size() > 1) {
    const auto paired = summarize_errors(second, truth, names, design.n, design.j);
    for (std::size_t k = 0; k < table.rows.size(); ++k) table.rows[k].mse_second = paired[k].mse;
  }
  return table;
}

}  // namespace

ErrorTable mc_study(const SimDesign& design, Estimator estimator, const StudyConfig& cfg) {
  return run_study(design, {estimator}, cfg);
}

ErrorTable compare_study(const SimDesign& design, const StudyConfig& cfg) {
  return run_study(design, {Estimator::threshold, Estimator::urn}, cfg);
}

void write_error_table(std::ostream& os, const ErrorTable& table) {
  const bool paired = !table.rows.empty() && table.rows.front().mse_second.has_value();
  os << (paired ? "N,s,beta,MSE_recursive,MSE_urn\n" : "N,s,beta,MSE,MAE,median_bias,mean_bias\n");
  const auto old = os.precision(17);
  for (const auto& r : table.rows) {
    os << r.n << ',' << r.j << ',' << r.true_value << ',' << r.mse;
    if (paired)
      os << ',' << *r.mse_second;
    else
      os << ',' << r.mae << ',' << r.median_bias << ',' << r.mean_bias;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace trom
