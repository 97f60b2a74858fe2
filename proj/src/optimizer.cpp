#include "trom/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace trom::optim {

Eigen::VectorXd central_gradient(const Objective& f, const Eigen::VectorXd& x, double rel_step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = rel_step * std::max(1.0, std::abs(x[k]));
    xp[k] = x[k] + h;
    const double fp = f(xp);
    xp[k] = x[k] - h;
    const double fm = f(xp);
    xp[k] = x[k];
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Result maximize(const Objective& f, const Eigen::VectorXd& x0, const Options& opt,
                const Eigen::MatrixXd& inv_hessian0) {
  const Eigen::Index n = x0.size();
  Result r;
  r.x = x0;
  r.value = f(x0);
  if (!std::isfinite(r.value)) {
    r.grad = Eigen::VectorXd::Constant(n, std::nan(""));
    r.inv_hessian = Eigen::MatrixXd::Identity(n, n);
    return r;
  }
  r.grad = central_gradient(f, r.x, opt.fd_step);
  Eigen::MatrixXd h = inv_hessian0.size() == n * n ? inv_hessian0
                                                    : Eigen::MatrixXd::Identity(n, n);
  bool fresh_curvature = inv_hessian0.size() != n * n;

  auto grad_ok = [&](const Eigen::VectorXd& g) {
    return g.allFinite() && g.norm() / opt.grad_scale < opt.grad_tol;
  };

  for (r.iterations = 0; r.iterations < opt.max_iter; ++r.iterations) {
    if (grad_ok(r.grad)) {
      r.converged = true;
      break;
    }
    // Minimizing -f: descent direction is -H * (-g) = H g.
    Eigen::VectorXd dir = h * r.grad;
    if (!(dir.dot(r.grad) > 0.0)) {
      h.setIdentity();
      fresh_curvature = true;
      dir = r.grad;
    }
    if (fresh_curvature) {
      // Unit-free first step from the identity scaling.
      const double gn = dir.lpNorm<Eigen::Infinity>();
      if (gn > 0.0) dir *= std::min(1.0, 1.0 / gn);
    }
    const double dn = dir.lpNorm<Eigen::Infinity>();
    if (dn > opt.max_step) dir *= opt.max_step / dn;

    const double slope = dir.dot(r.grad);
    double alpha = 1.0;
    Eigen::VectorXd x_new;
    double f_new = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = r.x + alpha * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new >= r.value + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!fresh_curvature) {
        h.setIdentity();
        fresh_curvature = true;
        continue;
      }
      break;
    }

    const Eigen::VectorXd s = x_new - r.x;
    const Eigen::VectorXd g_new = central_gradient(f, x_new, opt.fd_step);
    const double f_old = r.value;
    r.x = x_new;
    r.value = f_new;
    const Eigen::VectorXd y = r.grad - g_new;  // gradient change of -f
    r.grad = g_new;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_curvature) {
        h *= sy / y.squaredNorm();
        fresh_curvature = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd i_n = Eigen::MatrixXd::Identity(n, n);
      h = (i_n - rho * s * y.transpose()) * h * (i_n - rho * y * s.transpose()) +
          rho * s * s.transpose();
    }

    const double step_rel = s.lpNorm<Eigen::Infinity>() / (1.0 + r.x.lpNorm<Eigen::Infinity>());
    if (step_rel < opt.step_tol &&
        std::abs(r.value - f_old) <= 1e-14 * (1.0 + std::abs(r.value))) {
      r.converged = true;
      ++r.iterations;
      break;
    }
  }
  if (!r.converged && grad_ok(r.grad)) r.converged = true;
  r.inv_hessian = h;
  return r;
}

}  // namespace trom::optim
