#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/barycenter.hpp"
#include "baryimp/error.hpp"
#include "baryimp/gaussian.hpp"
#include "baryimp/panel.hpp"
#include "baryimp/rng.hpp"

namespace baryimp {

enum class ImputeMode { kCondExpect, kFullBayes };

inline std::string impute_mode_label(ImputeMode m) {
  return m == ImputeMode::kCondExpect ? "cond_expect" : "full_bayes";
}

/// Conditional law of the missing coordinates of one row given the
/// observed ones and the mean vector: fill ~ N(A theta + b, S).
struct ConditionalMap {
  std::vector<Eigen::Index> missing;
  Eigen::MatrixXd a;  // |missing| x n
  Eigen::VectorXd b;
  Eigen::MatrixXd s;  // |missing| x |missing| Schur complement
};

/// Builds the conditional map for one mask row. x_obs holds the observed
/// values compactly, in ascending coordinate order. A fully observed row
/// yields an empty map; a fully missing row conditions on nothing, so
/// A is the coordinate selector, b = 0 and S the corresponding block of
/// omega.
inline ConditionalMap conditional_map(const std::vector<bool>& mask_row,
                                      const Eigen::VectorXd& x_obs,
                                      const Eigen::MatrixXd& omega) {
  const Eigen::Index n = omega.rows();
  if (omega.cols() != n || n < 1)
    throw std::invalid_argument("conditional_map: omega must be square");
  if (static_cast<Eigen::Index>(mask_row.size()) != n)
    throw std::invalid_argument(
        "conditional_map: mask length does not match omega");
  std::vector<Eigen::Index> miss;
  std::vector<Eigen::Index> obs;
  for (Eigen::Index i = 0; i < n; ++i)
    (mask_row[static_cast<std::size_t>(i)] ? miss : obs).push_back(i);
  if (x_obs.size() != static_cast<Eigen::Index>(obs.size()))
    throw std::invalid_argument(
        "conditional_map: observed-value count does not match the mask");

  ConditionalMap cm;
  cm.missing = miss;
  const auto nm = static_cast<Eigen::Index>(miss.size());
  const auto no = static_cast<Eigen::Index>(obs.size());
  cm.a = Eigen::MatrixXd::Zero(nm, n);
  cm.b = Eigen::VectorXd::Zero(nm);
  cm.s.resize(nm, nm);
  if (nm == 0) return cm;

  Eigen::MatrixXd omega_mm(nm, nm);
  for (Eigen::Index r = 0; r < nm; ++r)
    for (Eigen::Index c = 0; c < nm; ++c)
      omega_mm(r, c) =
          omega(miss[static_cast<std::size_t>(r)], miss[static_cast<std::size_t>(c)]);
  if (no == 0) {
    for (Eigen::Index r = 0; r < nm; ++r)
      cm.a(r, miss[static_cast<std::size_t>(r)]) = 1.0;
    cm.s = omega_mm;
    return cm;
  }

  Eigen::MatrixXd omega_oo(no, no);
  Eigen::MatrixXd omega_om(no, nm);
  for (Eigen::Index r = 0; r < no; ++r) {
    for (Eigen::Index c = 0; c < no; ++c)
      omega_oo(r, c) =
          omega(obs[static_cast<std::size_t>(r)], obs[static_cast<std::size_t>(c)]);
    for (Eigen::Index c = 0; c < nm; ++c)
      omega_om(r, c) =
          omega(obs[static_cast<std::size_t>(r)], miss[static_cast<std::size_t>(c)]);
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(omega_oo);
  if (llt.info() != Eigen::Success)
    throw NumericError(
        "conditional_map: observed block of omega is not positive definite");
  const Eigen::MatrixXd w = llt.solve(omega_om).transpose();  // nm x no
  for (Eigen::Index r = 0; r < nm; ++r)
    cm.a(r, miss[static_cast<std::size_t>(r)]) = 1.0;
  for (Eigen::Index c = 0; c < no; ++c)
    cm.a.col(obs[static_cast<std::size_t>(c)]) -= w.col(c);
  cm.b = w * x_obs;
  cm.s = omega_mm - w * omega_om;
  cm.s = 0.5 * (cm.s + cm.s.transpose()).eval();
  return cm;
}

/// Fills the masked cells of a panel from draws of the mean vector.
/// Schur complements are computed once per distinct mask pattern and
/// reused across rows and imputations.
class Imputer {
public:
  Imputer(const Panel& panel, Eigen::MatrixXd omega)
      : values_(panel.values()), omega_(std::move(omega)) {
    if (omega_.rows() != panel.cols() || omega_.cols() != panel.cols())
      throw std::invalid_argument("Imputer: omega shape does not match panel");
    const Eigen::LLT<Eigen::MatrixXd> llt(omega_);
    if (llt.info() != Eigen::Success)
      throw NumericError("Imputer: omega is not positive definite");
    const Eigen::Index n = panel.cols();
    for (Eigen::Index t = 0; t < panel.rows(); ++t) {
      std::vector<bool> key(static_cast<std::size_t>(n));
      bool any = false;
      for (Eigen::Index i = 0; i < n; ++i) {
        key[static_cast<std::size_t>(i)] = panel.is_missing(t, i);
        any = any || key[static_cast<std::size_t>(i)];
      }
      if (!any) continue;
      auto it = index_.find(key);
      if (it == index_.end()) {
        PatternOps ops;
        Eigen::VectorXd x_obs(
            n - static_cast<Eigen::Index>(
                    std::count(key.begin(), key.end(), true)));
        x_obs.setZero();  // values are irrelevant for the pattern operators
        const ConditionalMap cm = conditional_map(key, x_obs, omega_);
        ops.map = cm;
        for (Eigen::Index i = 0; i < n; ++i)
          if (!key[static_cast<std::size_t>(i)]) ops.observed.push_back(i);
        // The observed-block coefficients of A are -W; keep W for the
        // row-dependent shift b = W x_obs.
        ops.w.resize(cm.a.rows(),
                     static_cast<Eigen::Index>(ops.observed.size()));
        for (std::size_t c = 0; c < ops.observed.size(); ++c)
          ops.w.col(static_cast<Eigen::Index>(c)) =
              -cm.a.col(ops.observed[c]);
        if (cm.s.size() > 0) {
          const Eigen::LLT<Eigen::MatrixXd> schur_llt(cm.s);
          if (schur_llt.info() != Eigen::Success)
            throw NumericError(
                "Imputer: conditional covariance is not positive definite");
          ops.noise_root = schur_llt.matrixL();
        }
        it = index_.emplace(std::move(key), ops_.size()).first;
        ops_.push_back(std::move(ops));
      }
      rows_.emplace_back(t, it->second);
    }
  }

  /// One completed copy of the panel. CondExpect fills the conditional
  /// mean given theta; FullBayes adds a draw of the conditional noise.
  /// Noise is consumed row by row in time order, so a fixed rng state
  /// yields a fixed completion.
  [[nodiscard]] Eigen::MatrixXd complete(const Eigen::VectorXd& theta,
                                         ImputeMode mode, Rng& rng) const {
    if (theta.size() != values_.cols())
      throw std::invalid_argument("Imputer: theta dimension mismatch");
    Eigen::MatrixXd out = values_;
    for (const auto& [t, oi] : rows_) {
      const PatternOps& po = ops_[oi];
      Eigen::VectorXd x_obs(static_cast<Eigen::Index>(po.observed.size()));
      for (std::size_t c = 0; c < po.observed.size(); ++c)
        x_obs(static_cast<Eigen::Index>(c)) = values_(t, po.observed[c]);
      Eigen::VectorXd fill = po.map.a * theta + po.w * x_obs;
      if (mode == ImputeMode::kFullBayes)
        fill = sample_mvn(rng, fill, po.noise_root);
      for (std::size_t r = 0; r < po.map.missing.size(); ++r)
        out(t, po.map.missing[r]) = fill(static_cast<Eigen::Index>(r));
    }
    return out;
  }

  [[nodiscard]] std::size_t pattern_count() const { return ops_.size(); }

private:
  struct PatternOps {
    ConditionalMap map;  // built with zero observations; b unused
    std::vector<Eigen::Index> observed;
    Eigen::MatrixXd w;  // |missing| x |observed| conditioning weights
    Eigen::MatrixXd noise_root;
  };

  Eigen::MatrixXd values_;
  Eigen::MatrixXd omega_;
  std::vector<PatternOps> ops_;
  std::map<std::vector<bool>, std::size_t> index_;
  std::vector<std::pair<Eigen::Index, std::size_t>> rows_;
};

/// Draws the mean vector from the aggregated posterior.
inline Eigen::VectorXd draw_mean(
    const std::variant<Gaussian, GaussianMixture>& aggregated, Rng& rng) {
  if (const auto* g = std::get_if<Gaussian>(&aggregated)) {
    const Eigen::LLT<Eigen::MatrixXd> llt(g->cov());
    if (llt.info() != Eigen::Success)
      throw NumericError("draw_mean: covariance is not positive definite");
    return sample_mvn(rng, g->mean(), Eigen::MatrixXd(llt.matrixL()));
  }
  return std::get<GaussianMixture>(aggregated).sample(rng);
}

/// m completed panels, one independent mean draw each. Imputation j uses
/// the stream derived from (seed, j), so the set of panels is invariant
/// to evaluation order.
inline std::vector<Eigen::MatrixXd> impute(
    const Panel& panel, const std::variant<Gaussian, GaussianMixture>& aggregated,
    const Eigen::MatrixXd& omega, ImputeMode mode, int m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("impute: need m >= 1");
  const Imputer imputer(panel, omega);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(j)}));
    const Eigen::VectorXd theta = draw_mean(aggregated, rng);
    out.push_back(imputer.complete(theta, mode, rng));
  }
  return out;
}

}  // namespace baryimp
