#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/error.hpp"

namespace baryimp {

namespace detail {

enum class LpStatus { kOptimal, kInfeasible, kUnbounded };

struct LpResult {
  LpStatus status = LpStatus::kOptimal;
  Eigen::VectorXd x;
  double value = 0.0;
};

/// Dense two-phase tableau simplex for min c^T x s.t. A x = b, x >= 0.
/// Bland's rule, so it terminates on degenerate problems. Sized for the
/// small programs that arise from bias-set support functions.
inline LpResult solve_lp_equality(const Eigen::VectorXd& c,
                                  const Eigen::MatrixXd& a,
                                  const Eigen::VectorXd& b) {
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  if (b.size() != m || c.size() != n)
    throw std::invalid_argument("solve_lp_equality: dimension mismatch");

  Eigen::MatrixXd t(m, n + m + 1);
  t.leftCols(n) = a;
  t.block(0, n, m, m) = Eigen::MatrixXd::Identity(m, m);
  t.col(n + m) = b;
  for (Eigen::Index i = 0; i < m; ++i)
    if (t(i, n + m) < 0.0) t.row(i) = -t.row(i);

  std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i)
    basis[static_cast<std::size_t>(i)] = n + i;

  const double tol = 1e-9;
  auto pivot = [&](Eigen::Index row, Eigen::Index col) {
    t.row(row) /= t(row, col);
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      if (i == row || t(i, col) == 0.0) continue;
      t.row(i) -= t(i, col) * t.row(row);
    }
    basis[static_cast<std::size_t>(row)] = col;
  };

  // One simplex run over the active column range with the given costs.
  // Returns false when the problem is unbounded below.
  auto run = [&](const Eigen::VectorXd& cost, Eigen::Index ncols) -> bool {
    for (int iter = 0; iter < 20000; ++iter) {
      // Reduced costs from scratch keeps the tableau free of drift.
      Eigen::Index enter = -1;
      for (Eigen::Index j = 0; j < ncols; ++j) {
        double r = cost(j);
        for (Eigen::Index i = 0; i < m; ++i)
          r -= cost(basis[static_cast<std::size_t>(i)]) * t(i, j);
        if (r < -tol) {
          enter = j;  // Bland: first improving column
          break;
        }
      }
      if (enter < 0) return true;
      Eigen::Index leave = -1;
      double best = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (t(i, enter) > tol) {
          const double ratio = t(i, n + m) / t(i, enter);
          if (leave < 0 || ratio < best - 1e-12 ||
              (std::abs(ratio - best) <= 1e-12 &&
               basis[static_cast<std::size_t>(i)] <
                   basis[static_cast<std::size_t>(leave)])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    throw NumericError("solve_lp_equality: iteration limit reached");
  };

  // Phase 1: drive the artificial variables to zero.
  Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n + m);
  phase1.tail(m).setOnes();
  if (!run(phase1, n + m))
    throw NumericError("solve_lp_equality: phase 1 unbounded");
  double art = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    if (basis[static_cast<std::size_t>(i)] >= n) art += t(i, n + m);
  if (art > 1e-7) return {LpStatus::kInfeasible, Eigen::VectorXd(), 0.0};

  // Pivot leftover zero-level artificials out of the basis when possible.
  // A row where no real column can take over is redundant; its artificial
  // stays basic at level zero and never moves since the whole row is
  // within tolerance of zero.
  for (Eigen::Index i = 0; i < m; ++i) {
    if (basis[static_cast<std::size_t>(i)] < n) continue;
    Eigen::Index col = -1;
    for (Eigen::Index j = 0; j < n && col < 0; ++j)
      if (std::abs(t(i, j)) > tol) col = j;
    if (col >= 0) pivot(i, col);
  }

  Eigen::VectorXd cost = Eigen::VectorXd::Zero(n + m);
  cost.head(n) = c;
  if (!run(cost, n)) return {LpStatus::kUnbounded, Eigen::VectorXd(), 0.0};

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < m; ++i)
    if (basis[static_cast<std::size_t>(i)] < n)
      x(basis[static_cast<std::size_t>(i)]) = t(i, n + m);
  return {LpStatus::kOptimal, x, c.dot(x)};
}

}  // namespace detail

/// Unit Euclidean ball; support function |mu|_2.
struct EuclideanBall {};

/// The single point 1_n; support function 1^T mu, which can be negative.
struct SingletonOnes {};

/// {z : A z <= b}. Must be nonempty and bounded; both are detected when
/// the support LP is solved.
struct Polyhedron {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

/// {z : |V^T z|_1 <= 1} for orthogonal V; support function |V^T mu|_inf.
struct TransformedL1Ball {
  Eigen::MatrixXd V;
};

using BiasSet =
    std::variant<EuclideanBall, SingletonOnes, Polyhedron, TransformedL1Ball>;

inline std::string bias_set_name(const BiasSet& z) {
  if (std::holds_alternative<EuclideanBall>(z)) return "euclidean";
  if (std::holds_alternative<SingletonOnes>(z)) return "ones";
  if (std::holds_alternative<Polyhedron>(z)) return "polyhedron";
  return "vball";
}

inline void validate_bias_set(const BiasSet& z, Eigen::Index n) {
  if (const auto* p = std::get_if<Polyhedron>(&z)) {
    if (p->A.cols() != n)
      throw std::invalid_argument("bias polyhedron: column count must match "
                                  "the panel dimension");
    if (p->A.rows() != p->b.size() || p->A.rows() < 1)
      throw std::invalid_argument("bias polyhedron: A and b shapes disagree");
  } else if (const auto* v = std::get_if<TransformedL1Ball>(&z)) {
    if (v->V.rows() != n || v->V.cols() != n)
      throw std::invalid_argument("bias vball: V must be n x n");
    const double ortho = (v->V.transpose() * v->V -
                          Eigen::MatrixXd::Identity(n, n))
                             .cwiseAbs()
                             .maxCoeff();
    if (ortho > 1e-10)
      throw std::invalid_argument("bias vball: V must be orthogonal");
  }
}

namespace detail {

/// Maximizer z* of z^T mu over {A z <= b} via the split form
/// z = u - w, u, w >= 0 with slacks. Also used for cut generation.
inline Eigen::VectorXd polyhedron_argmax(const Polyhedron& p,
                                         const Eigen::VectorXd& mu) {
  const Eigen::Index n = p.A.cols();
  const Eigen::Index m = p.A.rows();
  Eigen::MatrixXd a(m, 2 * n + m);
  a.leftCols(n) = p.A;
  a.middleCols(n, n) = -p.A;
  a.rightCols(m) = Eigen::MatrixXd::Identity(m, m);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(2 * n + m);
  c.head(n) = -mu;
  c.segment(n, n) = mu;
  const LpResult r = solve_lp_equality(c, a, p.b);
  if (r.status == LpStatus::kInfeasible)
    throw NumericError("bias polyhedron is empty");
  if (r.status == LpStatus::kUnbounded)
    throw NumericError(
        "bias polyhedron is unbounded along the queried direction; a bounded "
        "polyhedron is required");
  return r.x.head(n) - r.x.segment(n, n);
}

}  // namespace detail

/// Support function sup_{z in Z} z^T mu of the bias set. One-sided: the
/// value is signed for sets not symmetric about the origin.
inline double bias_value(const BiasSet& z, const Eigen::VectorXd& mu) {
  validate_bias_set(z, mu.size());
  if (std::holds_alternative<EuclideanBall>(z)) return mu.norm();
  if (std::holds_alternative<SingletonOnes>(z)) return mu.sum();
  if (const auto* v = std::get_if<TransformedL1Ball>(&z))
    return (v->V.transpose() * mu).cwiseAbs().maxCoeff();
  const auto& p = std::get<Polyhedron>(z);
  return detail::polyhedron_argmax(p, mu).dot(mu);
}

}  // namespace baryimp
