#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/error.hpp"

namespace baryimp::opt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Euclidean projection onto the unit simplex (sort-based).
inline VectorXd project_to_simplex(const VectorXd& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double theta = 0.0;
  Eigen::Index rho = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    css += u[static_cast<std::size_t>(i)];
    const double tr = (css - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - tr > 0.0) {
      rho = i;
      theta = tr;
    }
  }
  (void)rho;
  return (v.array() - theta).cwiseMax(0.0);
}

/// Smooth objective. The Hessian callback may be empty; only the
/// interior-point solver requires it.
struct Objective {
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> grad;
  std::function<MatrixXd(const VectorXd&)> hess;
};

struct PgdOptions {
  int max_iter = 20000;
  double tol = 1e-12;  // projected-gradient sup-norm
};

struct PgdResult {
  VectorXd x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Spectral projected gradient over the unit simplex. Steps use
/// Barzilai-Borwein scaling; the line search along the feasible segment
/// first tries the secant-exact step (exact for quadratics) and falls
/// back to nonmonotone Armijo halving.
inline PgdResult projected_gradient_simplex(const Objective& f, VectorXd x,
                                            const PgdOptions& opt = {}) {
  x = project_to_simplex(x);
  double fx = f.value(x);
  VectorXd g = f.grad(x);
  double alpha = 1.0;
  std::deque<double> recent{fx};
  PgdResult res;
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    const VectorXd trial = project_to_simplex(x - alpha * g);
    const VectorXd d = trial - x;
    const double dnorm = d.cwiseAbs().maxCoeff();
    const double stat =
        (project_to_simplex(x - g) - x).cwiseAbs().maxCoeff();
    if (stat <= opt.tol) {
      res.converged = true;
      res.iterations = iter;
      break;
    }
    if (dnorm <= 1e-16) {
      // BB step collapsed; retry with unit step before giving up.
      if (alpha == 1.0) {
        res.converged = stat <= 10 * opt.tol;
        res.iterations = iter;
        break;
      }
      alpha = 1.0;
      continue;
    }
    const double slope = g.dot(d);
    double t = 1.0;
    if (slope < 0.0) {
      const double slope1 = f.grad(x + d).dot(d);
      if (slope1 > slope) {
        // Secant step, the exact minimizer when f is quadratic along d.
        t = std::clamp(slope / (slope - slope1), 1e-4, 1.0);
      }
    }
    const double fmax = *std::max_element(recent.begin(), recent.end());
    double ft = f.value(x + t * d);
    int backtracks = 0;
    while (ft > fmax + 1e-4 * t * slope && backtracks < 60) {
      t *= 0.5;
      ft = f.value(x + t * d);
      ++backtracks;
    }
    const VectorXd x_new = x + t * d;
    const VectorXd g_new = f.grad(x_new);
    const VectorXd s = x_new - x;
    const VectorXd y = g_new - g;
    const double sy = s.dot(y);
    alpha = sy > 1e-16 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : 1.0;
    x = x_new;
    fx = ft;
    g = g_new;
    recent.push_back(fx);
    if (recent.size() > 10) recent.pop_front();
    res.iterations = iter + 1;
  }
  res.x = x;
  res.value = f.value(x);
  return res;
}

/// Inequality constraint g(x) <= 0 with gradient.
struct IneqConstraint {
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> grad;
};

/// Equality constraint h(x) = 0 with gradient.
struct EqConstraint {
  std::function<double(const VectorXd&)> value;
  std::function<VectorXd(const VectorXd&)> grad;
};

struct AugLagOptions {
  int outer_iter = 60;
  double feas_tol = 1e-10;
  double rho0 = 100.0;
  double rho_max = 1e12;
  PgdOptions inner;
};

struct AugLagResult {
  VectorXd x;
  double value = 0.0;
  double max_violation = 0.0;
  bool converged = false;
};

/// Augmented Lagrangian over the unit simplex: the simplex itself is
/// handled by projection, the listed constraints by multipliers with a
/// quadratic penalty. The penalty parameter grows tenfold whenever the
/// violation fails to shrink by 4x between outer iterations.
inline AugLagResult augmented_lagrangian_simplex(
    const Objective& f, const std::vector<IneqConstraint>& ineqs,
    const std::vector<EqConstraint>& eqs, VectorXd x,
    const AugLagOptions& opt = {}) {
  VectorXd y_in = VectorXd::Zero(static_cast<Eigen::Index>(ineqs.size()));
  VectorXd y_eq = VectorXd::Zero(static_cast<Eigen::Index>(eqs.size()));
  double rho = opt.rho0;
  double prev_violation = std::numeric_limits<double>::infinity();
  AugLagResult best;
  best.max_violation = std::numeric_limits<double>::infinity();
  bool inner_ok = false;
  for (int outer = 0; outer < opt.outer_iter; ++outer) {
    Objective lag;
    lag.value = [&](const VectorXd& v) {
      double s = f.value(v);
      for (std::size_t i = 0; i < ineqs.size(); ++i) {
        const double gi = ineqs[i].value(v);
        const double m = std::max(0.0, y_in(static_cast<Eigen::Index>(i)) + rho * gi);
        s += (m * m - y_in(static_cast<Eigen::Index>(i)) *
                          y_in(static_cast<Eigen::Index>(i))) /
             (2.0 * rho);
      }
      for (std::size_t i = 0; i < eqs.size(); ++i) {
        const double hi = eqs[i].value(v);
        s += y_eq(static_cast<Eigen::Index>(i)) * hi + 0.5 * rho * hi * hi;
      }
      return s;
    };
    lag.grad = [&](const VectorXd& v) {
      VectorXd g = f.grad(v);
      for (std::size_t i = 0; i < ineqs.size(); ++i) {
        const double gi = ineqs[i].value(v);
        const double m = std::max(0.0, y_in(static_cast<Eigen::Index>(i)) + rho * gi);
        if (m > 0.0) g += m * ineqs[i].grad(v);
      }
      for (std::size_t i = 0; i < eqs.size(); ++i) {
        const double hi = eqs[i].value(v);
        g += (y_eq(static_cast<Eigen::Index>(i)) + rho * hi) * eqs[i].grad(v);
      }
      return g;
    };
    const PgdResult inner = projected_gradient_simplex(lag, x, opt.inner);
    x = inner.x;
    inner_ok = inner.converged;
    double violation = 0.0;
    for (std::size_t i = 0; i < ineqs.size(); ++i) {
      const double gi = ineqs[i].value(x);
      violation = std::max(violation, gi);
      y_in(static_cast<Eigen::Index>(i)) =
          std::max(0.0, y_in(static_cast<Eigen::Index>(i)) + rho * gi);
    }
    for (std::size_t i = 0; i < eqs.size(); ++i) {
      const double hi = eqs[i].value(x);
      violation = std::max(violation, std::abs(hi));
      y_eq(static_cast<Eigen::Index>(i)) += rho * hi;
    }
    const double fx = f.value(x);
    if (violation <= best.max_violation + 1e-15 &&
        (violation < best.max_violation - 1e-15 || fx < best.value)) {
      best.x = x;
      best.value = fx;
      best.max_violation = violation;
    }
    if (violation <= opt.feas_tol && inner.converged) {
      const bool settled = outer > 0 && violation >= prev_violation * 0.9 - 1e-16;
      if (settled || violation == 0.0) {
        best.converged = true;
        break;
      }
    }
    if (violation > 0.25 * prev_violation)
      rho = std::min(rho * 10.0, opt.rho_max);
    prev_violation = violation;
  }
  if (best.x.size() == 0) {
    best.x = x;
    best.value = f.value(x);
  }
  if (!best.converged)
    best.converged = best.max_violation <= opt.feas_tol && inner_ok;
  return best;
}

struct IpmOptions {
  int max_iter = 200;
  double gap_tol = 1e-11;
  double residual_tol = 1e-9;
  double mu = 10.0;
};

struct IpmResult {
  VectorXd x;
  double value = 0.0;
  bool converged = false;
};

/// Primal-dual interior-point method for
///   min f(x)  s.t.  G x <= h,  1^T x = 1,
/// with smooth convex f supplying value, gradient and Hessian. The start
/// must satisfy G x0 < h strictly; it need not sum to one. Newton steps
/// on the perturbed KKT system with residual-decrease backtracking.
inline IpmResult interior_point_polytope(const Objective& f, const MatrixXd& g_mat,
                                         const VectorXd& h, VectorXd x,
                                         const IpmOptions& opt = {}) {
  const Eigen::Index n = x.size();
  const Eigen::Index m = g_mat.rows();
  VectorXd s = h - g_mat * x;
  if (s.minCoeff() <= 0.0)
    throw std::invalid_argument("interior_point_polytope: start not strictly "
                                "feasible");
  VectorXd z = s.cwiseInverse();
  double nu = 0.0;

  auto residuals = [&](const VectorXd& xv, const VectorXd& zv, double nuv,
                       double t, VectorXd& rd, VectorXd& rc, double& rp) {
    const VectorXd sv = h - g_mat * xv;
    rd = f.grad(xv) + g_mat.transpose() * zv + VectorXd::Constant(n, nuv);
    rc = zv.cwiseProduct(sv).array() - 1.0 / t;
    rp = xv.sum() - 1.0;
  };

  IpmResult res;
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    s = h - g_mat * x;
    const double eta = s.dot(z);
    const double t = opt.mu * static_cast<double>(m) / std::max(eta, 1e-300);
    VectorXd rd, rc;
    double rp = 0.0;
    residuals(x, z, nu, t, rd, rc, rp);
    const double scale = std::max(1.0, f.grad(x).norm());
    if (eta <= opt.gap_tol * std::max(1.0, std::abs(f.value(x))) &&
        rd.norm() <= opt.residual_tol * scale &&
        std::abs(rp) <= opt.residual_tol) {
      res.converged = true;
      break;
    }

    const VectorXd zs = z.cwiseQuotient(s);
    MatrixXd kkt(n + 1, n + 1);
    kkt.setZero();
    kkt.topLeftCorner(n, n) =
        f.hess(x) + g_mat.transpose() * zs.asDiagonal() * g_mat;
    kkt.topLeftCorner(n, n) += 1e-13 * MatrixXd::Identity(n, n);
    kkt.block(0, n, n, 1).setOnes();
    kkt.block(n, 0, 1, n).setOnes();
    VectorXd rhs(n + 1);
    rhs.head(n) = -rd + g_mat.transpose() * rc.cwiseQuotient(s);
    rhs(n) = -rp;
    // The bordered KKT matrix is indefinite, so a pivoted LU is used
    // rather than a Cholesky variant.
    const VectorXd sol = kkt.fullPivLu().solve(rhs);
    const VectorXd dx = sol.head(n);
    const double dnu = sol(n);
    const VectorXd dz =
        (z.cwiseProduct(g_mat * dx) - rc).cwiseQuotient(s);

    double alpha = 1.0;
    for (Eigen::Index i = 0; i < m; ++i)
      if (dz(i) < 0.0) alpha = std::min(alpha, -z(i) / dz(i));
    const VectorXd gdx = g_mat * dx;
    for (Eigen::Index i = 0; i < m; ++i)
      if (gdx(i) > 0.0) alpha = std::min(alpha, s(i) / gdx(i));
    alpha *= 0.99;

    const double rnorm0 =
        std::sqrt(rd.squaredNorm() + rc.squaredNorm() + rp * rp);
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const VectorXd xn = x + alpha * dx;
      const VectorXd zn = z + alpha * dz;
      const VectorXd sn = h - g_mat * xn;
      if (sn.minCoeff() > 0.0 && zn.minCoeff() > 0.0) {
        VectorXd rdn, rcn;
        double rpn = 0.0;
        residuals(xn, zn, nu + alpha * dnu, t, rdn, rcn, rpn);
        const double rnorm =
            std::sqrt(rdn.squaredNorm() + rcn.squaredNorm() + rpn * rpn);
        if (rnorm <= (1.0 - 0.01 * alpha) * rnorm0) {
          x = xn;
          z = zn;
          nu += alpha * dnu;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) break;  // stalled; caller falls back
  }
  res.x = x;
  res.value = f.value(x);
  return res;
}

}  // namespace baryimp::opt
