#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/error.hpp"
#include "baryimp/gaussian.hpp"
#include "baryimp/panel.hpp"

namespace baryimp {

/// Strictly increasing truncation times T_1 < ... < T_K. The first time
/// is the end of the training window, the last the end of the test
/// window; posterior k sees rows [0, T_k).
struct TruncationSchedule {
  std::vector<Eigen::Index> times;

  explicit TruncationSchedule(std::vector<Eigen::Index> t)
      : times(std::move(t)) {
    if (times.size() < 2)
      throw std::invalid_argument("TruncationSchedule: need at least two times");
    for (std::size_t k = 1; k < times.size(); ++k)
      if (times[k] <= times[k - 1])
        throw std::invalid_argument(
            "TruncationSchedule: times must be strictly increasing");
    if (times.front() < 1)
      throw std::invalid_argument("TruncationSchedule: times must be positive");
  }

  [[nodiscard]] int K() const { return static_cast<int>(times.size()); }
};

/// Equispaced schedule T_k = T_train + round((k-1) T_test / (K-1)),
/// k = 1..K. Requires 2 <= K <= T_test + 1; within that range the
/// spacing is at least one row, so the times are strictly increasing.
inline TruncationSchedule make_schedule(int K, Eigen::Index t_train,
                                        Eigen::Index t_test) {
  if (t_train < 1 || t_test < 1)
    throw std::invalid_argument("make_schedule: windows must be nonempty");
  if (K < 2 || K > static_cast<int>(t_test) + 1)
    throw std::invalid_argument(
        "make_schedule: K must lie in [2, T_test + 1], got " +
        std::to_string(K));
  std::vector<Eigen::Index> times(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double frac = static_cast<double>(k) * static_cast<double>(t_test) /
                        static_cast<double>(K - 1);
    times[static_cast<std::size_t>(k)] =
        t_train + static_cast<Eigen::Index>(std::llround(frac));
  }
  return TruncationSchedule(std::move(times));
}

/// Prior over the mean vector: a Gaussian, or nullopt for the flat
/// (improper) prior.
using Prior = std::optional<Gaussian>;

namespace detail {

/// Accumulates one row's contribution to the precision and shift of the
/// Gaussian posterior over the mean: the inverse of the observed block of
/// Omega, zero-filled back to n x n, and that same matrix applied to the
/// zero-filled observed values. Inverses are memoized per missingness
/// pattern.
class PrecisionAccumulator {
public:
  PrecisionAccumulator(const Eigen::MatrixXd& omega)
      : omega_(omega),
        prec_(Eigen::MatrixXd::Zero(omega.rows(), omega.cols())),
        shift_(Eigen::VectorXd::Zero(omega.rows())) {
    Eigen::LLT<Eigen::MatrixXd> llt(omega_);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument(
          "posterior: covariance of returns must be positive definite");
    omega_inv_ = llt.solve(Eigen::MatrixXd::Identity(omega.rows(), omega.cols()));
  }

  void add_row(const Panel& panel, Eigen::Index t) {
    const Eigen::Index n = omega_.rows();
    std::vector<Eigen::Index> obs;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!panel.is_missing(t, i)) obs.push_back(i);
    if (obs.empty()) return;
    if (static_cast<Eigen::Index>(obs.size()) == n) {
      prec_ += omega_inv_;
      shift_ += omega_inv_ * panel.values().row(t).transpose();
      return;
    }
    std::vector<bool> key(static_cast<std::size_t>(n));
    for (Eigen::Index i : obs) key[static_cast<std::size_t>(i)] = true;
    auto it = block_inverses_.find(key);
    if (it == block_inverses_.end()) {
      const auto m = static_cast<Eigen::Index>(obs.size());
      Eigen::MatrixXd block(m, m);
      for (Eigen::Index a = 0; a < m; ++a)
        for (Eigen::Index b = 0; b < m; ++b)
          block(a, b) = omega_(obs[static_cast<std::size_t>(a)],
                               obs[static_cast<std::size_t>(b)]);
      Eigen::LLT<Eigen::MatrixXd> llt(block);
      if (llt.info() != Eigen::Success)
        throw NumericError("posterior: observed block of the covariance is not "
                           "positive definite");
      it = block_inverses_
               .emplace(key, llt.solve(Eigen::MatrixXd::Identity(m, m)))
               .first;
    }
    const Eigen::MatrixXd& w = it->second;
    const auto m = static_cast<Eigen::Index>(obs.size());
    Eigen::VectorXd x(m);
    for (Eigen::Index a = 0; a < m; ++a)
      x(a) = panel.values()(t, obs[static_cast<std::size_t>(a)]);
    const Eigen::VectorXd wx = w * x;
    for (Eigen::Index a = 0; a < m; ++a) {
      shift_(obs[static_cast<std::size_t>(a)]) += wx(a);
      for (Eigen::Index b = 0; b < m; ++b)
        prec_(obs[static_cast<std::size_t>(a)], obs[static_cast<std::size_t>(b)]) +=
            w(a, b);
    }
  }

  /// Closes the accumulation into a Gaussian, adding the prior terms.
  [[nodiscard]] Gaussian finish(const Prior& prior) const {
    Eigen::MatrixXd prec = prec_;
    Eigen::VectorXd shift = shift_;
    if (prior.has_value()) {
      Eigen::LLT<Eigen::MatrixXd> llt(prior->cov());
      if (llt.info() != Eigen::Success)
        throw std::invalid_argument("posterior: prior covariance must be "
                                    "positive definite");
      const Eigen::MatrixXd p0 =
          llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
      prec += p0;
      shift += p0 * prior->mean();
    }
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success)
      throw NumericError("posterior: accumulated precision is not positive "
                         "definite");
    Eigen::MatrixXd cov =
        llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
    cov = ((cov + cov.transpose()) / 2.0).eval();
    // The mean must be computed before cov is moved out of; argument
    // evaluation order would otherwise be unspecified.
    Eigen::VectorXd mean = cov * shift;
    return Gaussian(std::move(mean), std::move(cov));
  }

private:
  const Eigen::MatrixXd& omega_;
  Eigen::MatrixXd omega_inv_;
  Eigen::MatrixXd prec_;
  Eigen::VectorXd shift_;
  std::map<std::vector<bool>, Eigen::MatrixXd> block_inverses_;
};

inline void check_coverage(const Panel& panel, Eigen::Index t_k,
                           const Prior& prior) {
  if (prior.has_value()) return;
  for (Eigen::Index i = 0; i < panel.cols(); ++i) {
    bool observed = false;
    for (Eigen::Index t = 0; t < t_k && !observed; ++t)
      observed = !panel.is_missing(t, i);
    if (!observed)
      throw DataError("posterior: asset '" + panel.columns()[i] +
                      "' has no observed entries in the first " +
                      std::to_string(t_k) +
                      " rows; the flat-prior posterior is singular");
  }
}

}  // namespace detail

/// Gaussian posterior over the mean vector from the first t_k panel rows,
/// with known covariance omega and the given prior. With a flat prior
/// every asset must be observed at least once within those rows.
inline Gaussian posterior(const Panel& panel, Eigen::Index t_k,
                          const Eigen::MatrixXd& omega,
                          const Prior& prior = std::nullopt) {
  if (t_k < 1 || t_k > panel.rows())
    throw std::invalid_argument("posterior: truncation time out of range");
  if (omega.rows() != panel.cols() || omega.cols() != panel.cols())
    throw std::invalid_argument("posterior: covariance dimension mismatch");
  detail::check_coverage(panel, t_k, prior);
  detail::PrecisionAccumulator acc(omega);
  for (Eigen::Index t = 0; t < t_k; ++t) acc.add_row(panel, t);
  return acc.finish(prior);
}

/// Time-truncated posterior family plus, after projection, the shared
/// eigenbasis that simultaneously diagonalizes all covariances.
struct PosteriorSet {
  std::vector<Gaussian> posteriors;
  TruncationSchedule schedule;
  std::optional<EigenBasis> basis;

  PosteriorSet(std::vector<Gaussian> post, TruncationSchedule sched,
               std::optional<EigenBasis> b = std::nullopt)
      : posteriors(std::move(post)),
        schedule(std::move(sched)),
        basis(std::move(b)) {
    if (posteriors.size() != schedule.times.size())
      throw std::invalid_argument(
          "PosteriorSet: posterior count does not match the schedule");
    const Eigen::Index n = posteriors.front().dim();
    for (const auto& p : posteriors)
      if (p.dim() != n)
        throw std::invalid_argument("PosteriorSet: dimension mismatch");
    if (basis.has_value()) {
      if (basis->V.rows() != n)
        throw std::invalid_argument("PosteriorSet: basis dimension mismatch");
      if (basis->diagonals.size() != posteriors.size())
        throw std::invalid_argument(
            "PosteriorSet: one diagonal per posterior required");
      for (std::size_t k = 0; k < posteriors.size(); ++k) {
        const Eigen::MatrixXd rebuilt = basis->V *
                                        basis->diagonals[k].asDiagonal() *
                                        basis->V.transpose();
        const double rel = (rebuilt - posteriors[k].cov()).norm() /
                           std::max(1.0, posteriors[k].cov().norm());
        if (rel > 1e-8) {
          std::ostringstream msg;
          msg << "PosteriorSet: covariance " << k
              << " is not diagonalized by the basis, relative residual " << rel;
          throw std::invalid_argument(msg.str());
        }
      }
    }
  }

  [[nodiscard]] int K() const { return static_cast<int>(posteriors.size()); }
  [[nodiscard]] Eigen::Index dim() const { return posteriors.front().dim(); }
};

/// Builds all K posteriors in one pass over the panel; posterior k uses
/// rows [0, T_k).
inline PosteriorSet make_posterior_set(const Panel& panel,
                                       const Eigen::MatrixXd& omega,
                                       const TruncationSchedule& schedule,
                                       const Prior& prior = std::nullopt) {
  if (schedule.times.back() > panel.rows())
    throw std::invalid_argument("make_posterior_set: schedule exceeds panel");
  if (schedule.times.front() != panel.split().train)
    throw std::invalid_argument(
        "make_posterior_set: schedule must start at the training boundary");
  for (Eigen::Index t_k : schedule.times)
    detail::check_coverage(panel, t_k, prior);
  detail::PrecisionAccumulator acc(omega);
  std::vector<Gaussian> posteriors;
  Eigen::Index t = 0;
  for (Eigen::Index t_k : schedule.times) {
    for (; t < t_k; ++t) acc.add_row(panel, t);
    posteriors.push_back(acc.finish(prior));
  }
  return PosteriorSet(std::move(posteriors), schedule);
}

/// Which divergence the diagonal approximation should be optimal for.
enum class ProjectionMode { kForwardKl, kBackwardKl };

/// Projects every posterior covariance onto the eigenbasis V of the first
/// posterior's covariance. Means are unchanged. Per coordinate j,
/// forward-KL mode uses d_kj = v_j^T S_k v_j (preserving the trace) and
/// backward-KL mode uses d_kj = 1 / [V^T S_k^{-1} V]_jj. The first
/// posterior is reproduced up to round-off in both modes.
inline PosteriorSet project_to_basis(const PosteriorSet& set,
                                     ProjectionMode mode) {
  const Eigen::Index n = set.dim();
  const SymEig es = sym_eig(set.posteriors.front().cov());
  const Eigen::MatrixXd& v = es.vectors;
  std::vector<Eigen::VectorXd> diagonals;
  std::vector<Gaussian> projected;
  diagonals.reserve(set.posteriors.size());
  for (const auto& p : set.posteriors) {
    Eigen::VectorXd d(n);
    if (mode == ProjectionMode::kForwardKl) {
      d = (v.transpose() * p.cov() * v).diagonal();
    } else {
      Eigen::LLT<Eigen::MatrixXd> llt(p.cov());
      if (llt.info() != Eigen::Success)
        throw NumericError("project_to_basis: covariance not positive definite");
      const Eigen::MatrixXd m = v.transpose() * llt.solve(v);
      for (Eigen::Index j = 0; j < n; ++j) d(j) = 1.0 / m(j, j);
    }
    if (d.minCoeff() <= 0.0)
      throw NumericError("project_to_basis: nonpositive projected variance");
    projected.emplace_back(p.mean(),
                           Eigen::MatrixXd(v * d.asDiagonal() * v.transpose()));
    diagonals.push_back(std::move(d));
  }
  return PosteriorSet(std::move(projected), set.schedule,
                      EigenBasis(v, std::move(diagonals)));
}

}  // namespace baryimp
