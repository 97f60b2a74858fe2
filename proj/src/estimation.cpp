#include "trom/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "trom/likelihood.hpp"
#include "trom/parallel.hpp"
#include "trom/rng.hpp"

namespace trom {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_ranked(const ChoiceDataset& data) {
  if (data.n_students() == 0) throw EstimationError("no students in dataset");
  if (data.n_ranking_students() == 0) throw EstimationError("no ranked observations");
}

Eigen::VectorXd uniform_start(std::size_t dim, std::uint64_t seed, std::uint64_t start,
                              double lo, double hi) {
  CounterRng rng({seed, start, 0x7374617274ULL});
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
  for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = rng.uniform(lo, hi);
  return x;
}

FitResult multistart(const ChoiceDataset& data, const MleConfig& cfg,
                     const optim::Objective& objective, std::size_t n_obs) {
  const std::size_t p = data.n_pair_covariates();
  if (cfg.starts < 1 && !cfg.initial) throw std::invalid_argument("fit needs at least one start");

  std::vector<Eigen::VectorXd> starts;
  if (cfg.initial) {
    if (static_cast<std::size_t>(cfg.initial->size()) != p)
      throw std::invalid_argument("initial beta has the wrong length");
    starts.push_back(*cfg.initial);
  }
  for (int s = 0; s < cfg.starts; ++s)
    starts.push_back(uniform_start(p, cfg.seed, static_cast<std::uint64_t>(s), cfg.start_lo,
                                   cfg.start_hi));

  optim::Options opts = cfg.optim;
  opts.grad_scale = static_cast<double>(std::max<std::size_t>(n_obs, 1));

  FitResult best;
  best.loglik = kNegInf;
  bool have = false;
  for (const auto& x0 : starts) {
    ++best.starts_tried;
    const optim::Result r = optim::maximize(objective, x0, opts);
    if (!std::isfinite(r.value)) continue;
    if (!have || r.value > best.loglik) {
      have = true;
      best.params.beta = r.x;
      best.loglik = r.value;
      best.converged = r.converged;
      best.iterations = r.iterations;
    }
  }
  if (!have) throw EstimationError("log-likelihood is not finite at any start");
  best.params.has_latent = false;
  best.aic = aic(best.loglik, best.params.n_free());
  if (!best.converged) best.notes.push_back("best start did not meet the convergence criterion");
  return best;
}

bool common_admit_prob(const Student& s) {
  return std::all_of(s.admit_prob.begin(), s.admit_prob.end(),
                     [&](double p) { return p == s.admit_prob.front(); });
}

// log g(L_i | c; beta) for every latent cost value in `costs`.
void student_log_g(const Student& s, std::span<const double> v, std::span<const double> costs,
                   std::span<double> out, std::vector<double>& w, RecursionWorkspace& ws,
                   ShiftedRolEvaluator& shifted) {
  const std::size_t j = v.size();
  w.resize(j);
  if (j > 0 && common_admit_prob(s)) {
    for (std::size_t k = 0; k < j; ++k) w[k] = v[k] - s.outside_value;
    shifted.reset(w, s.ranked_index, s.unranked_index);
    const double p = s.admit_prob.front();
    for (std::size_t t = 0; t < costs.size(); ++t) out[t] = costs[t] / p;
    shifted.log_probs(out, out);
    return;
  }
  for (std::size_t t = 0; t < costs.size(); ++t) {
    const double c = costs[t];
    for (std::size_t k = 0; k < j; ++k) w[k] = v[k] - c / s.admit_prob[k] - s.outside_value;
    out[t] = log_rol_likelihood_unchecked(w, s.ranked_index, s.unranked_index, ws);
  }
}

// Row-major N x T matrix of log g(L_i | c_it; beta).
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMatrix log_g_matrix(const ChoiceDataset& data, const Eigen::VectorXd& beta,
                       const RowMatrix& costs) {
  RowMatrix out(costs.rows(), costs.cols());
  std::vector<double> v, w;
  RecursionWorkspace ws;
  ShiftedRolEvaluator shifted;
  const auto t = static_cast<std::size_t>(costs.cols());
  for (std::size_t i = 0; i < data.n_students(); ++i) {
    const Student& s = data.students[i];
    linear_index(s, beta, v);
    const auto row = static_cast<Eigen::Index>(i);
    student_log_g(s, v, {costs.row(row).data(), t}, {out.row(row).data(), t}, w, ws, shifted);
  }
  return out;
}

RowMatrix latent_costs(const Eigen::MatrixXd& z, const ThresholdParams& p,
                       const RowMatrix& innovations) {
  const Eigen::VectorXd mean = z * p.gamma;
  const double sd = std::sqrt(p.sigma2);
  RowMatrix c = sd * innovations;
  c.colwise() += mean;
  return c;
}

// Posterior weights from log g; returns the simulated observed-data log-likelihood.
double posterior_weights(const ChoiceDataset& data, const RowMatrix& log_g,
                         Eigen::MatrixXd* weights) {
  const Eigen::Index n = log_g.rows(), t = log_g.cols();
  if (weights) weights->resize(n, t);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = log_g.row(i).maxCoeff();
    if (!std::isfinite(m))
      throw EstimationError("posterior weights underflow for student " +
                            std::to_string(data.students[static_cast<std::size_t>(i)].id));
    double sum = 0.0;
    for (Eigen::Index k = 0; k < t; ++k) sum += std::exp(log_g(i, k) - m);
    ll += m + std::log(sum) - std::log(static_cast<double>(t));
    if (weights)
      for (Eigen::Index k = 0; k < t; ++k) (*weights)(i, k) = std::exp(log_g(i, k) - m) / sum;
  }
  return ll;
}

}  // namespace

double aic(double loglik, std::size_t n_free) {
  return 2.0 * static_cast<double>(n_free) - 2.0 * loglik;
}

void check_rank(const ChoiceDataset& data) {
  const std::size_t p = data.n_pair_covariates();
  for (std::size_t k = 0; k < p; ++k) {
    bool seen = false, varies = false;
    double first = 0.0;
    for (const auto& s : data.students) {
      for (Eigen::Index r = 0; r < s.pair_covariates.rows() && !varies; ++r) {
        const double x = s.pair_covariates(r, static_cast<Eigen::Index>(k));
        if (!seen) {
          first = x;
          seen = true;
        } else if (x != first) {
          varies = true;
        }
      }
      if (varies) break;
    }
    if (!varies)
      throw EstimationError("rank-deficient design: covariate '" + data.pair_covariate_names[k] +
                            "' is constant across all student-school pairs");
  }
}

double threshold_loglik(const ChoiceDataset& data, const Eigen::VectorXd& beta) {
  std::vector<double> w;
  RecursionWorkspace ws;
  double ll = 0.0;
  for (const auto& s : data.students) {
    linear_index(s, beta, w);
    for (double& x : w) x -= s.outside_value;
    ll += log_rol_likelihood_unchecked(w, s.ranked_index, s.unranked_index, ws);
    if (ll == kNegInf) return ll;
  }
  return std::isnan(ll) ? kNegInf : ll;
}

double urn_loglik(const ChoiceDataset& data, const Eigen::VectorXd& beta) {
  std::vector<double> w;
  double ll = 0.0;
  for (const auto& s : data.students) {
    if (s.rol.empty()) continue;
    linear_index(s, beta, w);
    ll += log_partial_urn_likelihood(w, s.ranked_index);
  }
  return std::isnan(ll) ? kNegInf : ll;
}

FitResult fit_mle(const ChoiceDataset& data, const MleConfig& cfg) {
  require_ranked(data);
  check_rank(data);
  auto objective = [&data](const Eigen::VectorXd& b) { return threshold_loglik(data, b); };
  return multistart(data, cfg, objective, data.n_students());
}

FitResult fit_urn(const ChoiceDataset& data, const MleConfig& cfg) {
  require_ranked(data);
  check_rank(data);
  auto objective = [&data](const Eigen::VectorXd& b) { return urn_loglik(data, b); };
  FitResult r = multistart(data, cfg, objective, data.n_ranking_students());
  const std::size_t skipped = data.n_students() - data.n_ranking_students();
  if (skipped > 0)
    r.notes.push_back(std::to_string(skipped) + " students with empty lists skipped by the urn fit");
  return r;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd student_covariate_matrix(const ChoiceDataset& data) {
  const auto n = static_cast<Eigen::Index>(data.n_students());
  const auto q = static_cast<Eigen::Index>(data.n_student_covariates());
  Eigen::MatrixXd z(n, q);
  for (Eigen::Index i = 0; i < n; ++i)
    z.row(i) = data.students[static_cast<std::size_t>(i)].student_covariates.transpose();
  return z;
}

Eigen::MatrixXd common_random_numbers(std::size_t n_students, std::size_t draws,
                                      std::uint64_t seed) {
  Eigen::MatrixXd e(static_cast<Eigen::Index>(n_students), static_cast<Eigen::Index>(draws));
  for (std::size_t i = 0; i < n_students; ++i) {
    CounterRng rng({seed, i, 0x63726eULL});
    for (std::size_t t = 0; t < draws; ++t)
      e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = rng.normal();
  }
  return e;
}

double simulated_loglik(const ChoiceDataset& data, const ThresholdParams& params,
                        const Eigen::MatrixXd& innovations) {
  const Eigen::MatrixXd z = student_covariate_matrix(data);
  const RowMatrix e = innovations;
  const RowMatrix c = latent_costs(z, params, e);
  return posterior_weights(data, log_g_matrix(data, params.beta, c), nullptr);
}

Eigen::VectorXd update_gamma(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& draws,
                             const Eigen::MatrixXd& z) {
  const Eigen::VectorXd c_hat = weights.cwiseProduct(draws).rowwise().sum();
  const Eigen::MatrixXd ztz = z.transpose() * z;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ztz);
  if (qr.rank() < ztz.rows())
    throw EstimationError(
        "Z'Z is singular in the latent-cost update; rescale or drop collinear student covariates");
  return qr.solve(z.transpose() * c_hat);
}

double update_sigma2(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& draws,
                     const Eigen::MatrixXd& z, const Eigen::VectorXd& gamma) {
  const Eigen::VectorXd mean = z * gamma;
  const Eigen::MatrixXd dev = draws.colwise() - mean;
  return weights.cwiseProduct(dev.cwiseAbs2()).sum() / static_cast<double>(z.rows());
}

EmFitResult em_fit(const ChoiceDataset& data, const EmConfig& cfg) {
  require_ranked(data);
  check_rank(data);
  if (cfg.draws < 1) throw std::invalid_argument("em_fit needs at least one Monte Carlo draw");
  const std::size_t p = data.n_pair_covariates();
  const std::size_t q = data.n_student_covariates();
  if (q == 0) throw EstimationError("latent-cost model needs at least one student covariate");

  const Eigen::MatrixXd z = student_covariate_matrix(data);
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z.transpose() * z);
    if (qr.rank() < static_cast<Eigen::Index>(q))
      throw EstimationError("student covariates are degenerate (Z'Z singular)");
  }

  ThresholdParams theta;
  theta.has_latent = true;
  theta.beta = uniform_start(p, cfg.seed, 0, cfg.start_lo, cfg.start_hi);
  theta.gamma = uniform_start(q, cfg.seed, 1, cfg.start_lo, cfg.start_hi);
  theta.sigma2 = cfg.sigma2_start;
  if (cfg.initial) {
    if (cfg.initial->beta.size() == static_cast<Eigen::Index>(p)) theta.beta = cfg.initial->beta;
    if (cfg.initial->gamma.size() == static_cast<Eigen::Index>(q)) theta.gamma = cfg.initial->gamma;
    if (cfg.initial->sigma2 > 0.0) theta.sigma2 = cfg.initial->sigma2;
  }
  theta.check(data);

  EmFitResult out;
  const RowMatrix innov = common_random_numbers(data.n_students(), cfg.draws, cfg.seed);
  RowMatrix costs = latent_costs(z, theta, innov);
  RowMatrix log_g = log_g_matrix(data, theta.beta, costs);
  Eigen::MatrixXd weights;
  double ll = posterior_weights(data, log_g, &weights);

  optim::Options mopt = cfg.m_step;
  mopt.grad_scale = static_cast<double>(data.n_students());
  Eigen::MatrixXd curvature;
  bool floored = false;
  bool converged = false;
  int iter = 0;

  for (iter = 1; iter <= cfg.max_iter; ++iter) {
    const Eigen::MatrixXd c_dense = costs;
    Eigen::VectorXd gamma_new = update_gamma(weights, c_dense, z);
    double sigma2_new = update_sigma2(weights, c_dense, z, gamma_new);
    if (sigma2_new < cfg.sigma2_floor) {
      sigma2_new = cfg.sigma2_floor;
      floored = true;
    }

    // M2: weighted log-likelihood over the current draws.
    const RowMatrix w_row = weights;
    auto q_fn = [&](const Eigen::VectorXd& b) {
      std::vector<double> v, wbuf, lg(cfg.draws);
      RecursionWorkspace ws;
      ShiftedRolEvaluator shifted;
      double total = 0.0;
      for (std::size_t i = 0; i < data.n_students(); ++i) {
        const Student& s = data.students[i];
        linear_index(s, b, v);
        const auto row = static_cast<Eigen::Index>(i);
        student_log_g(s, v, {costs.row(row).data(), cfg.draws}, lg, wbuf, ws, shifted);
        const double* wr = w_row.row(row).data();
        for (std::size_t t = 0; t < cfg.draws; ++t)
          if (wr[t] > 0.0) total += wr[t] * lg[t];
        if (!std::isfinite(total)) return kNegInf;
      }
      return total;
    };
    const optim::Result m2 = optim::maximize(q_fn, theta.beta, mopt, curvature);
    curvature = m2.inv_hessian;
    const Eigen::VectorXd beta_new = m2.x;

    // Candidate update, shrunk towards the current latent parameters if the
    // simulated likelihood would fall.
    ThresholdParams cand = theta;
    cand.beta = beta_new;
    double shrink = 1.0;
    RowMatrix cand_costs, cand_log_g;
    double cand_ll = kNegInf;
    for (int attempt = 0;; ++attempt) {
      cand.gamma = theta.gamma + shrink * (gamma_new - theta.gamma);
      cand.sigma2 = theta.sigma2 + shrink * (sigma2_new - theta.sigma2);
      cand_costs = shrink == 0.0 ? costs : latent_costs(z, cand, innov);
      cand_log_g = log_g_matrix(data, cand.beta, cand_costs);
      bool finite = true;
      for (Eigen::Index i = 0; i < cand_log_g.rows() && finite; ++i)
        finite = std::isfinite(cand_log_g.row(i).maxCoeff());
      cand_ll = finite ? posterior_weights(data, cand_log_g, nullptr) : kNegInf;
      if (!cfg.monotone_guard || cand_ll >= ll || shrink == 0.0) break;
      shrink = attempt < 3 ? shrink * 0.5 : 0.0;
    }
    if (!std::isfinite(cand_ll))
      throw EstimationError("EM update produced a non-finite likelihood");

    double delta = (cand.beta - theta.beta).cwiseAbs().maxCoeff();
    delta = std::max(delta, (cand.gamma - theta.gamma).cwiseAbs().maxCoeff());
    delta = std::max(delta, std::abs(cand.sigma2 - theta.sigma2));

    EmIteration rec;
    rec.iter = iter;
    rec.observed_loglik = ll;
    rec.delta = delta;
    rec.guard_shrink = shrink;
    rec.params = cand;
    out.trace.push_back(rec);

    theta = cand;
    costs = std::move(cand_costs);
    log_g = std::move(cand_log_g);
    ll = posterior_weights(data, log_g, &weights);
    if (delta < cfg.tol) {
      converged = true;
      break;
    }
  }

  out.fit.params = theta;
  out.fit.loglik = ll;
  out.fit.aic = aic(ll, theta.n_free());
  out.fit.converged = converged;
  out.fit.iterations = std::min(iter, cfg.max_iter);
  out.fit.starts_tried = 1;
  out.fit.notes.push_back(
      "M-step maximizes the weighted log-likelihood sum_i sum_t w_it log g(L_i|c_it;beta)");
  if (floored) out.fit.notes.push_back("sigma2 collapsed and was floored");
  out.state.iter = out.fit.iterations;
  out.state.params = theta;
  out.state.draws = cfg.draws;
  out.state.weights = weights;
  out.state.latent_draws = costs;
  out.state.delta = out.trace.empty() ? 0.0 : out.trace.back().delta;
  return out;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd flatten(const ThresholdParams& p) {
  const Eigen::Index nb = p.beta.size();
  const Eigen::Index ng = p.has_latent ? p.gamma.size() : 0;
  Eigen::VectorXd v(nb + ng + (p.has_latent ? 1 : 0));
  v.head(nb) = p.beta;
  if (p.has_latent) {
    v.segment(nb, ng) = p.gamma;
    v[nb + ng] = p.sigma2;
  }
  return v;
}

std::vector<std::string> parameter_names(const ChoiceDataset& data, bool latent) {
  std::vector<std::string> names;
  for (const auto& n : data.pair_covariate_names) names.push_back("beta_" + n);
  if (latent) {
    for (const auto& n : data.student_covariate_names) names.push_back("gamma_" + n);
    names.push_back("sigma2");
  }
  return names;
}

ChoiceDataset resample_students(const ChoiceDataset& data, std::uint64_t seed, std::size_t b) {
  ChoiceDataset out;
  out.pair_covariate_names = data.pair_covariate_names;
  out.student_covariate_names = data.student_covariate_names;
  const std::size_t n = data.n_students();
  out.students.reserve(n);
  CounterRng rng({seed, b, 0x626f6f74ULL});
  for (std::size_t i = 0; i < n; ++i) {
    auto k = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
    out.students.push_back(data.students[std::min(k, n - 1)]);
  }
  return out;
}

std::pair<double, double> percentile_interval(std::vector<double> values, double level) {
  if (values.empty()) throw std::invalid_argument("percentile_interval: no values");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0,1)");
  std::sort(values.begin(), values.end());
  const double b = static_cast<double>(values.size());
  const double tail = (1.0 - level) / 2.0;
  auto order_stat = [&](double rank) {
    auto k = static_cast<std::size_t>(std::ceil(rank - 1e-9));
    k = std::clamp<std::size_t>(k, 1, values.size());
    return values[k - 1];
  };
  return {order_stat(b * tail), order_stat(b * (1.0 - tail))};
}

BootstrapResult bootstrap_ci(const ChoiceDataset& data, const FitResult& point,
                             const Refit& refit, std::size_t replicates, double level,
                             std::uint64_t seed, std::size_t threads) {
  if (replicates < 50) throw std::invalid_argument("bootstrap needs B >= 50");
  const Eigen::VectorXd theta_hat = flatten(point.params);
  const auto dim = theta_hat.size();
  Eigen::MatrixXd reps(static_cast<Eigen::Index>(replicates), dim);
  std::vector<char> ok(replicates, 0);

  parallel_for(replicates, threads, [&](std::size_t b) {
    try {
      const ChoiceDataset sample = resample_students(data, seed, b);
      const FitResult r = refit(sample);
      const Eigen::VectorXd v = flatten(r.params);
      if (v.size() == dim && v.allFinite() && std::isfinite(r.loglik)) {
        reps.row(static_cast<Eigen::Index>(b)) = v.transpose();
        ok[b] = 1;
      }
    } catch (const std::exception&) {
      // Counted as dropped below.
    }
  });

  BootstrapResult out;
  out.requested = replicates;
  const auto kept = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
  out.dropped = replicates - kept;
  if (static_cast<double>(out.dropped) > 0.1 * static_cast<double>(replicates))
    throw EstimationError("bootstrap: " + std::to_string(out.dropped) + " of " +
                          std::to_string(replicates) + " replicates failed to refit");
  out.replicates.resize(static_cast<Eigen::Index>(kept), dim);
  Eigen::Index row = 0;
  for (std::size_t b = 0; b < replicates; ++b)
    if (ok[b]) out.replicates.row(row++) = reps.row(static_cast<Eigen::Index>(b));

  const auto names = parameter_names(data, point.params.has_latent);
  for (Eigen::Index k = 0; k < dim; ++k) {
    std::vector<double> col(out.replicates.col(k).data(),
                            out.replicates.col(k).data() + out.replicates.rows());
    const auto [lo, hi] = percentile_interval(std::move(col), level);
    out.intervals.push_back({names[static_cast<std::size_t>(k)], theta_hat[k], lo, hi});
  }
  return out;
}

}  // namespace trom
