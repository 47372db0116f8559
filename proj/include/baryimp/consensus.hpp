#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/barycenter.hpp"
#include "baryimp/bias.hpp"
#include "baryimp/error.hpp"
#include "baryimp/posterior.hpp"
#include "baryimp/rng.hpp"
#include "baryimp/simplex_opt.hpp"

namespace baryimp {

enum class Mechanism {
  kForwardKl,
  kWasserstein,
  kRestrictedWasserstein,
  kBackwardKl
};

inline std::string mechanism_label(Mechanism m) {
  switch (m) {
    case Mechanism::kForwardKl: return "forward_kl";
    case Mechanism::kWasserstein: return "wasserstein";
    case Mechanism::kRestrictedWasserstein: return "restricted_wasserstein";
    case Mechanism::kBackwardKl: return "backward_kl";
  }
  return "unknown";
}

enum class SolverStatus { kOptimal, kLocal, kFallbackAnchor, kFailed };

inline std::string status_label(SolverStatus s) {
  switch (s) {
    case SolverStatus::kOptimal: return "optimal";
    case SolverStatus::kLocal: return "local";
    case SolverStatus::kFallbackAnchor: return "fallback_anchor";
    case SolverStatus::kFailed: return "failed";
  }
  return "unknown";
}

/// Weighted consensus over the posterior family: the weights, the
/// aggregated posterior they induce, and the attained objective
/// (trace of the aggregated covariance) and bias.
struct ConsensusSolution {
  Eigen::VectorXd lambda;
  std::variant<Gaussian, GaussianMixture> aggregated;
  double delta = 0.0;
  double objective = 0.0;
  double bias_attained = 0.0;
  SolverStatus status = SolverStatus::kOptimal;

  [[nodiscard]] Eigen::VectorXd aggregated_mean() const {
    if (const auto* g = std::get_if<Gaussian>(&aggregated)) return g->mean();
    return std::get<GaussianMixture>(aggregated).moments().first;
  }
};

/// Mechanisms accept specific bias-set families: the forward-KL
/// penalization is derived for the transformed l1 ball in the shared
/// eigenbasis, the Wasserstein and mixture ones for sets with a linear
/// or conic support function.
inline void check_mechanism_bias(Mechanism mech, const BiasSet& bias) {
  const bool vball = std::holds_alternative<TransformedL1Ball>(bias);
  if (mech == Mechanism::kForwardKl) {
    if (!vball)
      throw std::invalid_argument(
          "forward_kl requires the transformed l1-ball bias set");
  } else if (vball) {
    throw std::invalid_argument(
        "the transformed l1-ball bias set is only supported by forward_kl");
  }
}

/// Largest useful bias budget: the support value of the gap between the
/// last and the first posterior mean, floored at zero. At this budget the
/// all-weight-on-the-last-posterior vertex is feasible.
inline double delta_max(const PosteriorSet& set, Mechanism mech,
                        const BiasSet& bias) {
  check_mechanism_bias(mech, bias);
  const Eigen::VectorXd gap =
      set.posteriors.back().mean() - set.posteriors.front().mean();
  return std::max(0.0, bias_value(bias, gap));
}

/// count equispaced budgets covering [0, dmax]; all zeros when dmax = 0.
inline std::vector<double> delta_grid(double dmax, int count = 10) {
  if (!(dmax >= 0.0) || !std::isfinite(dmax))
    throw std::invalid_argument("delta_grid: dmax must be finite and >= 0");
  if (count < 2) throw std::invalid_argument("delta_grid: need count >= 2");
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    grid[static_cast<std::size_t>(i)] =
        dmax * static_cast<double>(i) / static_cast<double>(count - 1);
  return grid;
}

namespace detail {

constexpr double kFeasSlack = 1e-7;    // accepted bias overshoot of solutions
constexpr double kVertexSlack = 1e-9;  // feasibility slack for pure vertices

inline Eigen::MatrixXd means_matrix(const PosteriorSet& set) {
  Eigen::MatrixXd m(set.dim(), set.K());
  for (int k = 0; k < set.K(); ++k)
    m.col(k) = set.posteriors[static_cast<std::size_t>(k)].mean();
  return m;
}

inline Eigen::VectorXd vertex(int k, int K) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(K);
  v(k) = 1.0;
  return v;
}

struct Candidate {
  Eigen::VectorXd lambda;
  double objective = 0.0;
  double bias = 0.0;
  bool from_solver = false;
  bool solver_converged = false;
};

/// Best feasible candidate by objective. Vertices use the tighter slack.
inline std::optional<Candidate> pick_winner(
    const std::vector<Candidate>& candidates, double delta) {
  std::optional<Candidate> best;
  for (const auto& c : candidates) {
    const double slack = c.from_solver ? kFeasSlack : kVertexSlack;
    if (c.bias > delta + slack) continue;
    if (!best || c.objective < best->objective) best = c;
  }
  return best;
}

/// Constraint bundle for a bias budget on the aggregated mean
/// r(lambda) = M lambda - mu_1. Euclidean budgets use the squared form
/// when delta > 0 and per-coordinate equalities when delta = 0; the
/// polyhedron is handled by linear cuts supplied by the caller.
struct BiasConstraints {
  std::vector<opt::IneqConstraint> ineqs;
  std::vector<opt::EqConstraint> eqs;
};

inline BiasConstraints mean_bias_constraints(
    const Eigen::MatrixXd& m, const Eigen::VectorXd& mu1, const BiasSet& bias,
    double delta, const std::vector<Eigen::VectorXd>& cuts) {
  BiasConstraints out;
  if (std::holds_alternative<EuclideanBall>(bias)) {
    if (delta > 0.0) {
      out.ineqs.push_back(
          {[&m, &mu1, delta](const Eigen::VectorXd& l) {
             return (m * l - mu1).squaredNorm() - delta * delta;
           },
           [&m, &mu1](const Eigen::VectorXd& l) {
             return Eigen::VectorXd(2.0 * m.transpose() * (m * l - mu1));
           }});
    } else {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out.eqs.push_back({[&m, &mu1, i](const Eigen::VectorXd& l) {
                             return m.row(i).dot(l) - mu1(i);
                           },
                           [&m, i](const Eigen::VectorXd& l) {
                             (void)l;
                             return Eigen::VectorXd(m.row(i).transpose());
                           }});
      }
    }
  } else if (std::holds_alternative<SingletonOnes>(bias)) {
    out.ineqs.push_back({[&m, &mu1, delta](const Eigen::VectorXd& l) {
                           return (m * l - mu1).sum() - delta;
                         },
                         [&m](const Eigen::VectorXd& l) {
                           (void)l;
                           return Eigen::VectorXd(
                               m.transpose() * Eigen::VectorXd::Ones(m.rows()));
                         }});
  } else if (std::holds_alternative<Polyhedron>(bias)) {
    for (const auto& z : cuts) {
      out.ineqs.push_back({[&m, &mu1, z, delta](const Eigen::VectorXd& l) {
                             return z.dot(m * l - mu1) - delta;
                           },
                           [&m, z](const Eigen::VectorXd& l) {
                             (void)l;
                             return Eigen::VectorXd(m.transpose() * z);
                           }});
    }
  }
  return out;
}

/// Deterministic interior simplex starts for multi-start local solvers.
inline std::vector<Eigen::VectorXd> dirichlet_starts(int count, int K,
                                                     std::uint64_t seed) {
  std::vector<Eigen::VectorXd> starts;
  Rng rng(seed);
  for (int r = 0; r < count; ++r) {
    Eigen::VectorXd l(K);
    for (int k = 0; k < K; ++k) l(k) = -std::log(1.0 - rng.uniform01());
    const double s = l.sum();
    starts.push_back(s > 0.0 ? Eigen::VectorXd(l / s)
                             : Eigen::VectorXd::Constant(K, 1.0 / K));
  }
  return starts;
}

}  // namespace detail

/// Minimizes the trace of the forward-KL barycenter covariance subject to
/// the transformed-l1-ball bias budget, over weights on the unit simplex.
/// In the shared eigenbasis the objective is sum_j 1/(sum_k lambda_k/d_kj)
/// and the bias budget is two linear constraints per coordinate. The main
/// route is a primal-dual interior-point solve; when no strictly interior
/// start exists (delta at or near zero) an augmented-Lagrangian projected
/// gradient handles the degenerate budget. A vertex fallback keeps the
/// result feasible even if both routes fail.
inline ConsensusSolution solve_forward_kl(const PosteriorSet& set,
                                          const BiasSet& bias, double delta) {
  if (!set.basis.has_value())
    throw std::invalid_argument(
        "solve_forward_kl: posterior set has no shared eigenbasis");
  check_mechanism_bias(Mechanism::kForwardKl, bias);
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::invalid_argument("solve_forward_kl: delta must be >= 0");
  const auto& vb = std::get<TransformedL1Ball>(bias);
  if ((vb.V - set.basis->V).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument(
        "solve_forward_kl: bias-set basis differs from the posterior basis");

  const int K = set.K();
  const Eigen::Index n = set.dim();
  Eigen::MatrixXd p(n, K);  // inverse projected variances
  for (int k = 0; k < K; ++k)
    p.col(k) = set.basis->diagonals[static_cast<std::size_t>(k)].cwiseInverse();
  const Eigen::MatrixXd means = detail::means_matrix(set);
  const Eigen::MatrixXd u = set.basis->V.transpose() * means;  // coords
  const Eigen::VectorXd u1 = u.col(0);
  const Eigen::MatrixXd c = u.cwiseProduct(p);

  opt::Objective f;
  f.value = [&p](const Eigen::VectorXd& l) {
    return (p * l).cwiseInverse().sum();
  };
  f.grad = [&p](const Eigen::VectorXd& l) {
    const Eigen::VectorXd s = p * l;
    return Eigen::VectorXd(-p.transpose() * s.array().pow(-2).matrix());
  };
  f.hess = [&p](const Eigen::VectorXd& l) {
    const Eigen::VectorXd s3 = (p * l).array().pow(-3).matrix();
    return Eigen::MatrixXd(2.0 * p.transpose() * s3.asDiagonal() * p);
  };

  std::vector<detail::Candidate> candidates;
  for (int k = 0; k < K; ++k) {
    detail::Candidate cand;
    cand.lambda = detail::vertex(k, K);
    cand.objective = f.value(cand.lambda);
    cand.bias = bias_value(bias, means.col(k) - means.col(0));
    candidates.push_back(std::move(cand));
  }

  // 2n linear bias rows: |sum_k c_jk l_k / sum_k p_jk l_k - u1_j| <= delta
  // multiplied through by the positive denominator.
  Eigen::MatrixXd rows(2 * n, K);
  for (Eigen::Index j = 0; j < n; ++j) {
    rows.row(j) = c.row(j) - (delta + u1(j)) * p.row(j);
    rows.row(n + j) = (u1(j) - delta) * p.row(j) - c.row(j);
  }

  bool solver_done = false;
  Eigen::VectorXd solver_lambda;
  bool solver_converged = false;

  // Interior-point route, entered from a strictly feasible blend of the
  // first-posterior vertex and the uniform point.
  Eigen::MatrixXd g_mat(K + 2 * n, K);
  g_mat.topRows(K) = -Eigen::MatrixXd::Identity(K, K);
  g_mat.bottomRows(2 * n) = rows;
  const Eigen::VectorXd h = Eigen::VectorXd::Zero(K + 2 * n);
  std::optional<Eigen::VectorXd> start;
  for (double eps = 0.3; eps >= 1e-9; eps *= 0.1) {
    Eigen::VectorXd trial = (1.0 - eps) * detail::vertex(0, K) +
                            eps * Eigen::VectorXd::Constant(K, 1.0 / K);
    bool strict = true;
    for (Eigen::Index i = 0; i < g_mat.rows() && strict; ++i) {
      const double margin = 1e-11 * (1.0 + g_mat.row(i).cwiseAbs().sum());
      strict = g_mat.row(i).dot(trial) < -margin;
    }
    if (strict) {
      start = trial;
      break;
    }
  }
  if (start.has_value()) {
    const opt::IpmResult ipm =
        opt::interior_point_polytope(f, g_mat, h, *start);
    solver_lambda = opt::project_to_simplex(ipm.x);
    solver_converged = ipm.converged;
    solver_done = true;
  }

  // Augmented-Lagrangian route for the degenerate or stalled cases.
  if (!solver_done || !solver_converged) {
    std::vector<opt::IneqConstraint> ineqs;
    std::vector<opt::EqConstraint> eqs;
    if (delta > 0.0) {
      for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const Eigen::VectorXd r = rows.row(i).transpose();
        ineqs.push_back({[r](const Eigen::VectorXd& l) { return r.dot(l); },
                         [r](const Eigen::VectorXd& l) {
                           (void)l;
                           return r;
                         }});
      }
    } else {
      for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::VectorXd r = (c.row(j) - u1(j) * p.row(j)).transpose();
        eqs.push_back({[r](const Eigen::VectorXd& l) { return r.dot(l); },
                       [r](const Eigen::VectorXd& l) {
                         (void)l;
                         return r;
                       }});
      }
    }
    opt::AugLagResult best;
    best.value = std::numeric_limits<double>::infinity();
    best.max_violation = std::numeric_limits<double>::infinity();
    for (const auto& s0 :
         {detail::vertex(0, K), Eigen::VectorXd::Constant(K, 1.0 / K).eval()}) {
      const opt::AugLagResult r =
          opt::augmented_lagrangian_simplex(f, ineqs, eqs, s0);
      if (r.converged && (!best.converged || r.value < best.value)) best = r;
      if (!best.converged && r.max_violation < best.max_violation) best = r;
    }
    if (best.x.size() > 0 &&
        (!solver_done || (best.converged && !solver_converged))) {
      solver_lambda = opt::project_to_simplex(best.x);
      solver_converged = best.converged;
      solver_done = true;
    }
  }

  if (solver_done) {
    detail::Candidate cand;
    cand.lambda = solver_lambda;
    cand.objective = f.value(solver_lambda);
    const Gaussian agg = forward_kl_barycenter(set, solver_lambda);
    cand.bias = bias_value(bias, agg.mean() - means.col(0));
    cand.from_solver = true;
    cand.solver_converged = solver_converged;
    candidates.push_back(std::move(cand));
  }

  const auto winner = detail::pick_winner(candidates, delta);
  if (!winner)
    throw NumericError("solve_forward_kl: no feasible candidate; the "
                       "first-posterior vertex should always be feasible");
  ConsensusSolution sol{winner->lambda, forward_kl_barycenter(set, winner->lambda),
                        delta, winner->objective, 0.0, SolverStatus::kOptimal};
  sol.bias_attained = bias_value(bias, sol.aggregated_mean() - means.col(0));
  sol.status = winner->from_solver && winner->solver_converged
                   ? SolverStatus::kOptimal
                   : SolverStatus::kFallbackAnchor;
  return sol;
}

namespace detail {

/// Shared machinery for the two mean-constrained solvers: multi-start
/// augmented Lagrangian with cut generation for polyhedral bias sets.
/// Returns the best lambda found plus whether any start converged.
struct MeanConstrainedOutcome {
  Eigen::VectorXd lambda;
  bool converged = false;
  std::vector<Eigen::VectorXd> cuts;
};

inline MeanConstrainedOutcome solve_mean_constrained(
    const opt::Objective& f, const Eigen::MatrixXd& means, const BiasSet& bias,
    double delta, const std::vector<Eigen::VectorXd>& starts) {
  const Eigen::VectorXd mu1 = means.col(0);
  MeanConstrainedOutcome out;
  std::vector<Eigen::VectorXd> cuts;
  const auto* poly = std::get_if<Polyhedron>(&bias);
  if (poly) {
    const Eigen::VectorXd gap = means.col(means.cols() - 1) - mu1;
    if (gap.norm() > 0.0)
      cuts.push_back(detail::polyhedron_argmax(*poly, gap));
  }
  for (int round = 0; round < 60; ++round) {
    const BiasConstraints cons =
        mean_bias_constraints(means, mu1, bias, delta, cuts);
    opt::AugLagResult best;
    best.value = std::numeric_limits<double>::infinity();
    bool have = false;
    for (const auto& s0 : starts) {
      const opt::AugLagResult r =
          opt::augmented_lagrangian_simplex(f, cons.ineqs, cons.eqs, s0);
      if (!have || (r.converged && !best.converged) ||
          (r.converged == best.converged && r.value < best.value)) {
        best = r;
        have = true;
      }
    }
    out.lambda = opt::project_to_simplex(best.x);
    out.converged = best.converged;
    if (!poly) break;
    const Eigen::VectorXd r = means * out.lambda - mu1;
    const double true_bias = bias_value(bias, r);
    if (true_bias <= delta + 1e-9) break;
    cuts.push_back(detail::polyhedron_argmax(*poly, r));
  }
  out.cuts = std::move(cuts);
  return out;
}

/// Cheap bias evaluation for grid scans: exact for the closed-form sets,
/// a lower bound via the current cuts for polyhedra (the caller verifies
/// the winning point with the exact LP).
struct GridBias {
  const Eigen::MatrixXd& means;
  const Eigen::VectorXd mu1;
  const BiasSet& bias;
  std::vector<Eigen::VectorXd> cut_coeffs;  // per cut: [z^T M, z^T mu1]
  const Eigen::VectorXd ones_coeff;

  GridBias(const Eigen::MatrixXd& m, const BiasSet& b,
           const std::vector<Eigen::VectorXd>& cuts)
      : means(m),
        mu1(m.col(0)),
        bias(b),
        ones_coeff(m.transpose() * Eigen::VectorXd::Ones(m.rows())) {
    for (const auto& z : cuts) {
      Eigen::VectorXd coef(m.cols() + 1);
      coef.head(m.cols()) = m.transpose() * z;
      coef(m.cols()) = z.dot(mu1);
      cut_coeffs.push_back(std::move(coef));
    }
  }

  [[nodiscard]] double operator()(const Eigen::VectorXd& l) const {
    if (std::holds_alternative<EuclideanBall>(bias))
      return (means * l - mu1).norm();
    if (std::holds_alternative<SingletonOnes>(bias))
      return ones_coeff.dot(l) - mu1.sum();
    double v = -std::numeric_limits<double>::infinity();
    for (const auto& coef : cut_coeffs)
      v = std::max(v, coef.head(l.size()).dot(l) - coef(l.size()));
    return cut_coeffs.empty() ? 0.0 : v;
  }
};

}  // namespace detail

/// Minimizes the 2-Wasserstein barycenter variance proxy
/// lambda^T G lambda with G_ij = tr(S_i^{1/2} S_j^{1/2}) subject to the
/// bias budget on the aggregated mean. Projected-gradient augmented
/// Lagrangian with exact line search on the quadratic; polyhedral bias
/// sets are enforced through support-function cuts.
inline ConsensusSolution solve_wasserstein(const PosteriorSet& set,
                                           const BiasSet& bias, double delta) {
  if (!set.basis.has_value())
    throw std::invalid_argument(
        "solve_wasserstein: posterior set has no shared eigenbasis");
  check_mechanism_bias(Mechanism::kWasserstein, bias);
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::invalid_argument("solve_wasserstein: delta must be >= 0");
  const int K = set.K();
  Eigen::MatrixXd roots(set.dim(), K);
  for (int k = 0; k < K; ++k)
    roots.col(k) = set.basis->diagonals[static_cast<std::size_t>(k)].cwiseSqrt();
  const Eigen::MatrixXd gram = roots.transpose() * roots;
  const Eigen::MatrixXd means = detail::means_matrix(set);

  opt::Objective f;
  f.value = [&gram](const Eigen::VectorXd& l) { return l.dot(gram * l); };
  f.grad = [&gram](const Eigen::VectorXd& l) {
    return Eigen::VectorXd(2.0 * gram * l);
  };

  std::vector<detail::Candidate> candidates;
  for (int k = 0; k < K; ++k) {
    detail::Candidate cand;
    cand.lambda = detail::vertex(k, K);
    cand.objective = f.value(cand.lambda);
    cand.bias = bias_value(bias, means.col(k) - means.col(0));
    candidates.push_back(std::move(cand));
  }

  std::vector<Eigen::VectorXd> starts = {
      detail::vertex(0, K), Eigen::VectorXd::Constant(K, 1.0 / K)};
  const detail::MeanConstrainedOutcome run =
      detail::solve_mean_constrained(f, means, bias, delta, starts);
  if (run.lambda.size() > 0) {
    detail::Candidate cand;
    cand.lambda = run.lambda;
    cand.objective = f.value(run.lambda);
    cand.bias = bias_value(bias, means * run.lambda - means.col(0));
    cand.from_solver = true;
    cand.solver_converged = run.converged;
    candidates.push_back(std::move(cand));
  }

  const auto winner = detail::pick_winner(candidates, delta);
  if (!winner)
    throw NumericError("solve_wasserstein: no feasible candidate; the "
                       "first-posterior vertex should always be feasible");
  ConsensusSolution sol{winner->lambda, w2_barycenter_diag(set, winner->lambda),
                        delta, winner->objective, 0.0, SolverStatus::kOptimal};
  sol.bias_attained =
      bias_value(bias, sol.aggregated_mean() - means.col(0));
  sol.status = winner->from_solver && winner->solver_converged
                   ? SolverStatus::kOptimal
                   : SolverStatus::kFallbackAnchor;
  return sol;
}

/// Minimizes the mixture variance proxy
///   sum_k lambda_k (|mu_k|^2 + tr S_k) - |sum_k lambda_k mu_k|^2
/// subject to the bias budget on the mixture mean. The objective is
/// concave, so projected-gradient descent runs from many starts (random
/// interior points plus the feasible vertices); solutions are local
/// rather than certified global. For K <= 3 a 1e-3-step simplex grid is
/// scanned as an extra candidate source.
inline ConsensusSolution solve_backward_kl(const PosteriorSet& set,
                                           const BiasSet& bias, double delta,
                                           int restarts = 32) {
  check_mechanism_bias(Mechanism::kBackwardKl, bias);
  if (!(delta >= 0.0) || !std::isfinite(delta))
    throw std::invalid_argument("solve_backward_kl: delta must be >= 0");
  if (restarts < 0)
    throw std::invalid_argument("solve_backward_kl: restarts must be >= 0");
  const int K = set.K();
  const Eigen::MatrixXd means = detail::means_matrix(set);
  const Eigen::MatrixXd b = means.transpose() * means;
  Eigen::VectorXd q(K);
  for (int k = 0; k < K; ++k) {
    const auto& post = set.posteriors[static_cast<std::size_t>(k)];
    q(k) = post.mean().squaredNorm() + post.cov().trace();
  }

  opt::Objective f;
  f.value = [&q, &b](const Eigen::VectorXd& l) {
    return q.dot(l) - l.dot(b * l);
  };
  f.grad = [&q, &b](const Eigen::VectorXd& l) {
    return Eigen::VectorXd(q - 2.0 * b * l);
  };

  std::vector<detail::Candidate> candidates;
  std::vector<Eigen::VectorXd> starts = {detail::vertex(0, K)};
  for (int k = 0; k < K; ++k) {
    detail::Candidate cand;
    cand.lambda = detail::vertex(k, K);
    cand.objective = f.value(cand.lambda);
    cand.bias = bias_value(bias, means.col(k) - means.col(0));
    if (cand.bias <= delta + detail::kVertexSlack && k > 0)
      starts.push_back(cand.lambda);
    candidates.push_back(std::move(cand));
  }
  for (auto& s : detail::dirichlet_starts(restarts, K, 0xB4C5D6E7ull))
    starts.push_back(std::move(s));

  const detail::MeanConstrainedOutcome run =
      detail::solve_mean_constrained(f, means, bias, delta, starts);
  if (run.lambda.size() > 0) {
    detail::Candidate cand;
    cand.lambda = run.lambda;
    cand.objective = f.value(run.lambda);
    cand.bias = bias_value(bias, means * run.lambda - means.col(0));
    cand.from_solver = true;
    cand.solver_converged = run.converged;
    candidates.push_back(std::move(cand));
  }

  if (K <= 3) {
    // Exhaustive scan; cheap bias bound first, exact check on the winner.
    std::vector<Eigen::VectorXd> cuts = run.cuts;
    const auto* poly = std::get_if<Polyhedron>(&bias);
    for (int round = 0; round < 30; ++round) {
      const detail::GridBias gb(means, bias, cuts);
      const int steps = 1000;
      Eigen::VectorXd best_l;
      double best_f = std::numeric_limits<double>::infinity();
      Eigen::VectorXd l(K);
      for (int i = 0; i <= steps; ++i) {
        const int j_max = K == 2 ? 0 : steps - i;
        for (int j = 0; j <= j_max; ++j) {
          l(0) = static_cast<double>(i) / steps;
          if (K == 2) {
            l(1) = 1.0 - l(0);
          } else {
            l(1) = static_cast<double>(j) / steps;
            l(2) = 1.0 - l(0) - l(1);
          }
          if (gb(l) > delta + 1e-9) continue;
          const double fv = f.value(l);
          if (fv < best_f) {
            best_f = fv;
            best_l = l;
          }
        }
      }
      if (best_l.size() == 0) break;
      if (poly) {
        const Eigen::VectorXd r = means * best_l - means.col(0);
        if (bias_value(bias, r) > delta + 1e-9) {
          cuts.push_back(detail::polyhedron_argmax(*poly, r));
          continue;
        }
      }
      detail::Candidate cand;
      cand.lambda = best_l;
      cand.objective = best_f;
      cand.bias = bias_value(bias, means * best_l - means.col(0));
      cand.from_solver = true;
      cand.solver_converged = true;
      candidates.push_back(std::move(cand));
      break;
    }
  }

  const auto winner = detail::pick_winner(candidates, delta);
  if (!winner)
    throw NumericError("solve_backward_kl: no feasible candidate; the "
                       "first-posterior vertex should always be feasible");
  ConsensusSolution sol{winner->lambda,
                        backward_kl_barycenter(set, winner->lambda), delta,
                        winner->objective, 0.0, SolverStatus::kLocal};
  const auto moments = std::get<GaussianMixture>(sol.aggregated).moments();
  sol.bias_attained = bias_value(bias, moments.first - means.col(0));
  if (!(winner->from_solver && winner->solver_converged))
    sol.status = SolverStatus::kFallbackAnchor;
  return sol;
}

/// Two-point variant of the Wasserstein mechanism: only the first and the
/// last posterior participate. Returns weights padded back to length K.
inline ConsensusSolution restricted_wasserstein(const PosteriorSet& set,
                                                double delta) {
  if (!set.basis.has_value())
    throw std::invalid_argument(
        "restricted_wasserstein: posterior set has no shared eigenbasis");
  const int K = set.K();
  std::vector<Gaussian> pair = {set.posteriors.front(), set.posteriors.back()};
  TruncationSchedule sched(
      {set.schedule.times.front(), set.schedule.times.back()});
  EigenBasis basis(set.basis->V, {set.basis->diagonals.front(),
                                  set.basis->diagonals.back()});
  const PosteriorSet sub(std::move(pair), std::move(sched), std::move(basis));
  ConsensusSolution sol = solve_wasserstein(sub, EuclideanBall{}, delta);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(K);
  full(0) = sol.lambda(0);
  full(K - 1) = sol.lambda(1);
  sol.lambda = std::move(full);
  return sol;
}

}  // namespace baryimp
