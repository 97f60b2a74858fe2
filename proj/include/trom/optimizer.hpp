#pragma once

// Quasi-Newton (BFGS) ascent with central finite-difference gradients and a
// backtracking Armijo line search.

#include <functional>

#include <Eigen/Dense>

namespace trom::optim {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct Options {
  double grad_tol = 1e-6;     // on ||grad|| / grad_scale
  double grad_scale = 1.0;    // e.g. the number of observations
  int max_iter = 500;
  double step_tol = 1e-10;    // relative step size below which progress has stalled
  double fd_step = 6e-6;      // relative central-difference step
  double max_step = 5.0;      // cap on the infinity norm of a trial step
};

struct Result {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd inv_hessian;  // approximation for the minimization of -f
  int iterations = 0;
  bool converged = false;
};

Eigen::VectorXd central_gradient(const Objective& f, const Eigen::VectorXd& x, double rel_step);

/// Maximizes f from x0. `inv_hessian0`, when non-empty, seeds the curvature
/// approximation (used to warm-start successive related problems).
Result maximize(const Objective& f, const Eigen::VectorXd& x0, const Options& opt,
                const Eigen::MatrixXd& inv_hessian0 = Eigen::MatrixXd());

}  // namespace trom::optim
