#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/error.hpp"

namespace baryimp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Multivariate normal distribution with strictly positive definite
/// covariance. Construction validates dimensions, symmetry (to 1e-12
/// relative tolerance) and positive definiteness; the stored covariance
/// is the symmetrized input.
class Gaussian {
public:
  Gaussian(VectorXd mean, MatrixXd cov)
      : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (cov_.rows() != cov_.cols())
      throw std::invalid_argument("Gaussian: covariance must be square");
    if (mean_.size() != cov_.rows())
      throw std::invalid_argument(
          "Gaussian: mean dimension does not match covariance");
    if (mean_.size() == 0)
      throw std::invalid_argument("Gaussian: dimension must be positive");
    const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
    const double asym = (cov_ - cov_.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * scale) {
      std::ostringstream msg;
      msg << "Gaussian: covariance not symmetric, max asymmetry " << asym;
      throw std::invalid_argument(msg.str());
    }
    cov_ = ((cov_ + cov_.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov_, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
      throw NumericError("Gaussian: eigenvalue computation failed");
    if (es.eigenvalues().minCoeff() <= 0.0) {
      std::ostringstream msg;
      msg << "Gaussian: covariance not positive definite, min eigenvalue "
          << es.eigenvalues().minCoeff();
      throw std::invalid_argument(msg.str());
    }
  }

  [[nodiscard]] const VectorXd& mean() const { return mean_; }
  [[nodiscard]] const MatrixXd& cov() const { return cov_; }
  [[nodiscard]] Eigen::Index dim() const { return mean_.size(); }

private:
  VectorXd mean_;
  MatrixXd cov_;
};

/// Shared eigenbasis for a family of covariance matrices: one orthogonal
/// matrix V plus a strictly positive diagonal vector per member, i.e.
/// member k has covariance V diag(d_k) V^T.
struct EigenBasis {
  MatrixXd V;
  std::vector<VectorXd> diagonals;

  EigenBasis(MatrixXd v, std::vector<VectorXd> diags)
      : V(std::move(v)), diagonals(std::move(diags)) {
    const Eigen::Index n = V.rows();
    if (V.cols() != n)
      throw std::invalid_argument("EigenBasis: V must be square");
    const double ortho =
        (V.transpose() * V - MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
    if (ortho > 1e-10) {
      std::ostringstream msg;
      msg << "EigenBasis: V not orthogonal, residual " << ortho;
      throw std::invalid_argument(msg.str());
    }
    for (const auto& d : diagonals) {
      if (d.size() != n)
        throw std::invalid_argument("EigenBasis: diagonal dimension mismatch");
      if (d.minCoeff() <= 0.0)
        throw std::invalid_argument(
            "EigenBasis: diagonals must be strictly positive");
    }
  }
};

/// Eigen decomposition of a symmetric matrix, eigenvalues ascending.
struct SymEig {
  VectorXd values;
  MatrixXd vectors;  // column j pairs with values(j)
};

/// Symmetric eigendecomposition with a deterministic sign convention:
/// within each eigenvector, the entry of largest magnitude (lowest index
/// on ties) is made positive. Rejects non-symmetric input.
inline SymEig sym_eig(const MatrixXd& m) {
  if (m.rows() != m.cols())
    throw std::invalid_argument("sym_eig: matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10 * scale) {
    std::ostringstream msg;
    msg << "sym_eig: matrix not symmetric, max asymmetry " << asym;
    throw std::invalid_argument(msg.str());
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(((m + m.transpose()) / 2.0).eval());
  if (es.info() != Eigen::Success)
    throw NumericError("sym_eig: eigenvalue computation failed");
  SymEig out{es.eigenvalues(), es.eigenvectors()};
  for (Eigen::Index j = 0; j < out.vectors.cols(); ++j) {
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < out.vectors.rows(); ++i) {
      const double a = std::abs(out.vectors(i, j));
      if (a > best) {
        best = a;
        pivot = i;
      }
    }
    if (out.vectors(pivot, j) < 0.0) out.vectors.col(j) = -out.vectors.col(j);
  }
  return out;
}

/// Symmetric positive semidefinite square root. Eigenvalues in
/// [-1e-10, 0) are treated as zero; anything lower is an error.
inline MatrixXd matrix_sqrt(const MatrixXd& m) {
  SymEig es = sym_eig(m);
  VectorXd lam = es.values;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam(i) < -1e-10) {
      std::ostringstream msg;
      msg << "matrix_sqrt: matrix not positive semidefinite, eigenvalue "
          << lam(i);
      throw std::invalid_argument(msg.str());
    }
    lam(i) = std::sqrt(std::max(0.0, lam(i)));
  }
  MatrixXd r = es.vectors * lam.asDiagonal() * es.vectors.transpose();
  return ((r + r.transpose()) / 2.0).eval();
}

/// log det of a positive definite matrix via Cholesky.
inline double log_det_pd(const MatrixXd& m) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NumericError("log_det_pd: matrix not positive definite");
  double s = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    s += std::log(llt.matrixL()(i, i));
  return 2.0 * s;
}

/// KL divergence KL(p || q) between Gaussians,
///   1/2 [ (mq-mp)^T Sq^{-1} (mq-mp) + tr(Sq^{-1} Sp) - log det(Sp Sq^{-1}) - n ].
inline double kl_divergence(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim())
    throw std::invalid_argument("kl_divergence: dimension mismatch");
  const Eigen::Index n = p.dim();
  Eigen::LLT<MatrixXd> llt(q.cov());
  if (llt.info() != Eigen::Success)
    throw NumericError("kl_divergence: covariance of q not positive definite");
  const VectorXd d = q.mean() - p.mean();
  const double quad = d.dot(llt.solve(d));
  const double tr = llt.solve(p.cov()).trace();
  const double logdet = log_det_pd(q.cov()) - log_det_pd(p.cov());
  return 0.5 * (quad + tr + logdet - static_cast<double>(n));
}

/// 2-Wasserstein distance between Gaussians,
///   W2^2 = |mp-mq|^2 + tr(Sp + Sq - 2 (Sq^{1/2} Sp Sq^{1/2})^{1/2}).
inline double w2_distance(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim())
    throw std::invalid_argument("w2_distance: dimension mismatch");
  const MatrixXd rq = matrix_sqrt(q.cov());
  const MatrixXd cross = matrix_sqrt((rq * p.cov() * rq).eval());
  const double sq = (p.mean() - q.mean()).squaredNorm() +
                    (p.cov() + q.cov()).trace() - 2.0 * cross.trace();
  return std::sqrt(std::max(0.0, sq));
}

/// First two moments of the mixture sum_k w_k N(mu_k, S_k):
/// mean sum_k w_k mu_k and covariance
/// sum_k w_k (mu_k mu_k^T + S_k) - mean mean^T.
inline std::pair<VectorXd, MatrixXd> mixture_moments(
    const std::vector<Gaussian>& components, const VectorXd& weights) {
  if (components.empty())
    throw std::invalid_argument("mixture_moments: no components");
  if (weights.size() != static_cast<Eigen::Index>(components.size()))
    throw std::invalid_argument("mixture_moments: weight count mismatch");
  if (weights.minCoeff() < -1e-12 ||
      std::abs(weights.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("mixture_moments: weights not on the simplex");
  const Eigen::Index n = components.front().dim();
  for (const auto& c : components)
    if (c.dim() != n)
      throw std::invalid_argument("mixture_moments: dimension mismatch");
  VectorXd mean = VectorXd::Zero(n);
  for (std::size_t k = 0; k < components.size(); ++k)
    mean += weights(static_cast<Eigen::Index>(k)) * components[k].mean();
  MatrixXd second = MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& c = components[k];
    second += weights(static_cast<Eigen::Index>(k)) *
              (c.mean() * c.mean().transpose() + c.cov());
  }
  MatrixXd cov = second - mean * mean.transpose();
  cov = ((cov + cov.transpose()) / 2.0).eval();
  return {mean, cov};
}

}  // namespace baryimp
