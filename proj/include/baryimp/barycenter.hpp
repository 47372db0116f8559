#pragma once

#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/error.hpp"
#include "baryimp/gaussian.hpp"
#include "baryimp/posterior.hpp"
#include "baryimp/rng.hpp"

namespace baryimp {

inline void check_simplex_weights(const Eigen::VectorXd& lambda,
                                  std::size_t expected) {
  if (lambda.size() != static_cast<Eigen::Index>(expected))
    throw std::invalid_argument("weights: count does not match components");
  if (lambda.minCoeff() < -1e-9 || std::abs(lambda.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("weights: not on the unit simplex");
}

/// Barycenter minimizing sum_k w_k KL(q || pi_k) over Gaussians q:
/// precision-weighted combination
///   Shat = (sum_k w_k S_k^{-1})^{-1},  muhat = Shat sum_k w_k S_k^{-1} mu_k.
inline Gaussian forward_kl_barycenter(const std::vector<Gaussian>& components,
                                      const Eigen::VectorXd& lambda) {
  check_simplex_weights(lambda, components.size());
  const Eigen::Index n = components.front().dim();
  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < components.size(); ++k) {
    const double w = lambda(static_cast<Eigen::Index>(k));
    if (w == 0.0) continue;
    Eigen::LLT<Eigen::MatrixXd> llt(components[k].cov());
    if (llt.info() != Eigen::Success)
      throw NumericError("forward_kl_barycenter: component covariance not "
                         "positive definite");
    const Eigen::MatrixXd pk = llt.solve(Eigen::MatrixXd::Identity(n, n));
    prec += w * pk;
    shift += w * (pk * components[k].mean());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success)
    throw NumericError("forward_kl_barycenter: combined precision not "
                       "positive definite");
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(n, n));
  cov = ((cov + cov.transpose()) / 2.0).eval();
  // The mean must be computed before cov is moved out of; argument
  // evaluation order would otherwise be unspecified.
  Eigen::VectorXd mean = cov * shift;
  return Gaussian(std::move(mean), std::move(cov));
}

inline Gaussian forward_kl_barycenter(const PosteriorSet& set,
                                      const Eigen::VectorXd& lambda) {
  return forward_kl_barycenter(set.posteriors, lambda);
}

/// 2-Wasserstein barycenter for a family sharing an eigenbasis:
/// muhat = sum_k w_k mu_k and, per coordinate, the standard deviations
/// average, dhat_j = (sum_k w_k sqrt(d_kj))^2.
inline Gaussian w2_barycenter_diag(const PosteriorSet& set,
                                   const Eigen::VectorXd& lambda) {
  if (!set.basis.has_value())
    throw std::invalid_argument("w2_barycenter_diag: posterior set has no "
                                "shared eigenbasis; project it first");
  check_simplex_weights(lambda, set.posteriors.size());
  const Eigen::Index n = set.dim();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd root = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < set.posteriors.size(); ++k) {
    const double w = lambda(static_cast<Eigen::Index>(k));
    mean += w * set.posteriors[k].mean();
    root += w * set.basis->diagonals[k].cwiseSqrt();
  }
  const Eigen::VectorXd d = root.cwiseProduct(root);
  const Eigen::MatrixXd& v = set.basis->V;
  return Gaussian(std::move(mean),
                  Eigen::MatrixXd(v * d.asDiagonal() * v.transpose()));
}

/// 2-Wasserstein barycenter covariance for general (not simultaneously
/// diagonalizable) components via the fixed-point iteration
///   S <- S^{-1/2} (sum_k w_k (S^{1/2} S_k S^{1/2})^{1/2})^2 S^{-1/2},
/// started from S = sum_k w_k S_k. Converged when the fixed-point
/// residual |S - sum_k w_k (S^{1/2} S_k S^{1/2})^{1/2}|_F is at most tol.
inline Gaussian w2_barycenter_fixed_point(
    const std::vector<Gaussian>& components, const Eigen::VectorXd& lambda,
    double tol = 1e-10, int max_iter = 500) {
  check_simplex_weights(lambda, components.size());
  if (!(tol > 0.0)) throw std::invalid_argument("w2 fixed point: tol must be positive");
  const Eigen::Index n = components.front().dim();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < components.size(); ++k) {
    const double w = lambda(static_cast<Eigen::Index>(k));
    mean += w * components[k].mean();
    s += w * components[k].cov();
  }
  double residual = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::MatrixXd r = matrix_sqrt(s);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < components.size(); ++k) {
      const double w = lambda(static_cast<Eigen::Index>(k));
      if (w == 0.0) continue;
      sum += w * matrix_sqrt((r * components[k].cov() * r).eval());
    }
    residual = (s - sum).norm();
    if (residual <= tol) return Gaussian(std::move(mean), std::move(s));
    Eigen::LLT<Eigen::MatrixXd> llt_root(r);
    if (llt_root.info() != Eigen::Success)
      throw NumericError("w2 fixed point: iterate lost positive definiteness");
    // S^{-1/2} T^2 S^{-1/2} = B B^T with B = S^{-1/2} T; both factors are
    // symmetric so B^T = T S^{-1/2}.
    const Eigen::MatrixXd b = llt_root.solve(sum);
    Eigen::MatrixXd next = b * b.transpose();
    s = ((next + next.transpose()) / 2.0).eval();
  }
  std::ostringstream msg;
  msg << "w2 fixed point: no convergence after " << max_iter
      << " iterations, residual " << residual;
  throw NumericError(msg.str());
}

/// Finite Gaussian mixture with simplex weights. Covariance factors are
/// cached for sampling.
class GaussianMixture {
public:
  GaussianMixture(std::vector<Gaussian> components, Eigen::VectorXd weights)
      : components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty())
      throw std::invalid_argument("GaussianMixture: no components");
    check_simplex_weights(weights_, components_.size());
    const Eigen::Index n = components_.front().dim();
    for (const auto& c : components_) {
      if (c.dim() != n)
        throw std::invalid_argument("GaussianMixture: dimension mismatch");
      Eigen::LLT<Eigen::MatrixXd> llt(c.cov());
      if (llt.info() != Eigen::Success)
        throw NumericError("GaussianMixture: component covariance not "
                           "positive definite");
      chols_.push_back(llt.matrixL());
    }
  }

  [[nodiscard]] const std::vector<Gaussian>& components() const {
    return components_;
  }
  [[nodiscard]] const Eigen::VectorXd& weights() const { return weights_; }
  [[nodiscard]] Eigen::Index dim() const { return components_.front().dim(); }

  /// Mixture mean and covariance.
  [[nodiscard]] std::pair<Eigen::VectorXd, Eigen::MatrixXd> moments() const {
    return mixture_moments(components_, weights_);
  }

  /// Draw: categorical component, then that component's Gaussian.
  Eigen::VectorXd sample(Rng& rng) const {
    const int k = rng.categorical(weights_);
    return sample_mvn(rng, components_[static_cast<std::size_t>(k)].mean(),
                      chols_[static_cast<std::size_t>(k)]);
  }

private:
  std::vector<Gaussian> components_;
  Eigen::VectorXd weights_;
  std::vector<Eigen::MatrixXd> chols_;
};

/// Barycenter minimizing sum_k w_k KL(pi_k || q) over all distributions
/// q: the mixture itself.
inline GaussianMixture backward_kl_barycenter(const PosteriorSet& set,
                                              const Eigen::VectorXd& lambda) {
  return GaussianMixture(set.posteriors, lambda);
}

}  // namespace baryimp
