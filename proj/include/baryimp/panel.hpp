#pragma once

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/error.hpp"
#include "baryimp/rng.hpp"

namespace baryimp {

using MaskMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Row counts of the three consecutive panel segments: training window,
/// test window, out-of-sample evaluation window.
struct Split {
  Eigen::Index train = 0;
  Eigen::Index test = 0;
  Eigen::Index oos = 0;

  [[nodiscard]] Eigen::Index total() const { return train + test + oos; }

  void validate() const {
    if (train < 1 || test < 1 || oos < 1)
      throw std::invalid_argument("Split: all three segments need rows");
  }
};

/// Returns panel: T x n values with a missingness mask (true = missing).
/// Missing entries are confined to the training rows, and every column
/// keeps at least one observed training entry; both are checked on
/// construction. Values at masked cells are stored as NaN.
class Panel {
public:
  Panel(Eigen::MatrixXd values, MaskMatrix mask, Split split,
        std::vector<std::string> columns = {})
      : values_(std::move(values)),
        mask_(std::move(mask)),
        split_(split),
        columns_(std::move(columns)) {
    split_.validate();
    if (values_.rows() != split_.total())
      throw DataError("Panel: row count does not match the split");
    if (mask_.rows() != values_.rows() || mask_.cols() != values_.cols())
      throw DataError("Panel: mask shape does not match values");
    if (values_.cols() < 1) throw DataError("Panel: no columns");
    if (columns_.empty()) {
      for (Eigen::Index i = 0; i < values_.cols(); ++i)
        columns_.push_back("a" + std::to_string(i + 1));
    }
    if (static_cast<Eigen::Index>(columns_.size()) != values_.cols())
      throw DataError("Panel: column name count does not match values");
    for (std::size_t i = 0; i < columns_.size(); ++i)
      for (std::size_t j = i + 1; j < columns_.size(); ++j)
        if (columns_[i] == columns_[j])
          throw DataError("Panel: duplicate column name '" + columns_[i] + "'");
    for (Eigen::Index t = split_.train; t < values_.rows(); ++t)
      for (Eigen::Index i = 0; i < values_.cols(); ++i)
        if (mask_(t, i))
          throw DataError("Panel: missing entry outside the training rows at row " +
                          std::to_string(t) + ", column '" + columns_[i] + "'");
    for (Eigen::Index i = 0; i < values_.cols(); ++i) {
      bool observed = false;
      for (Eigen::Index t = 0; t < split_.train && !observed; ++t)
        observed = !mask_(t, i);
      if (!observed)
        throw DataError("Panel: column '" + columns_[i] +
                        "' has no observed entries in the training rows");
    }
    for (Eigen::Index t = 0; t < values_.rows(); ++t)
      for (Eigen::Index i = 0; i < values_.cols(); ++i) {
        if (!mask_(t, i) && !std::isfinite(values_(t, i)))
          throw DataError("Panel: non-finite observed value at row " +
                          std::to_string(t) + ", column '" + columns_[i] + "'");
        if (mask_(t, i))
          values_(t, i) = std::numeric_limits<double>::quiet_NaN();
      }
  }

  [[nodiscard]] const Eigen::MatrixXd& values() const { return values_; }
  [[nodiscard]] const MaskMatrix& mask() const { return mask_; }
  [[nodiscard]] const Split& split() const { return split_; }
  [[nodiscard]] const std::vector<std::string>& columns() const {
    return columns_;
  }
  [[nodiscard]] Eigen::Index rows() const { return values_.rows(); }
  [[nodiscard]] Eigen::Index cols() const { return values_.cols(); }
  [[nodiscard]] bool is_missing(Eigen::Index t, Eigen::Index i) const {
    return mask_(t, i);
  }
  [[nodiscard]] bool fully_observed() const { return !mask_.any(); }

private:
  Eigen::MatrixXd values_;
  MaskMatrix mask_;
  Split split_;
  std::vector<std::string> columns_;
};

/// Every training cell is masked independently with probability p.
struct Mcar {
  double p = 0.5;
};

/// Column-dependent masking: each column i draws a selector
/// S_i ~ Bernoulli(selector_p); its training cells are then masked with
/// probability p_low if S_i = 1 and p_high otherwise.
struct Mar {
  double p_low = 0.5;
  double p_high = 0.7;
  double selector_p = 0.5;
};

/// Masks every column in the first floor(fraction * T_train) training rows.
struct BlockMissing {
  double fraction = 0.3;
};

/// Masks exactly the training cells whose absolute value exceeds the
/// threshold. Deterministic given the panel.
struct MissingByValue {
  double threshold = 0.3;
};

using MissingMechanism =
    std::variant<Mcar, Mar, BlockMissing, MissingByValue>;

inline std::string mechanism_name(const MissingMechanism& m) {
  if (std::holds_alternative<Mcar>(m)) return "mcar";
  if (std::holds_alternative<Mar>(m)) return "mar";
  if (std::holds_alternative<BlockMissing>(m)) return "block";
  return "by_value";
}

inline void validate_mechanism(const MissingMechanism& m) {
  auto check_prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
  };
  if (const auto* mc = std::get_if<Mcar>(&m)) {
    check_prob(mc->p, "mcar probability");
  } else if (const auto* ma = std::get_if<Mar>(&m)) {
    check_prob(ma->p_low, "mar p_low");
    check_prob(ma->p_high, "mar p_high");
    check_prob(ma->selector_p, "mar selector_p");
  } else if (const auto* b = std::get_if<BlockMissing>(&m)) {
    if (!(b->fraction > 0.0 && b->fraction < 1.0))
      throw std::invalid_argument("block fraction must lie in (0, 1)");
  } else if (const auto* v = std::get_if<MissingByValue>(&m)) {
    if (!(v->threshold >= 0.0) || !std::isfinite(v->threshold))
      throw std::invalid_argument("by_value threshold must be finite and >= 0");
  }
}

namespace detail {

/// Single mask draw, training rows only. Draw order is fixed so streams
/// are reproducible: MAR selectors first (by column), then cells row-major.
inline MaskMatrix draw_mask(const Eigen::MatrixXd& values, const Split& split,
                            const MissingMechanism& mech, Rng& rng) {
  const Eigen::Index n = values.cols();
  MaskMatrix mask = MaskMatrix::Constant(values.rows(), n, false);
  if (const auto* mc = std::get_if<Mcar>(&mech)) {
    for (Eigen::Index t = 0; t < split.train; ++t)
      for (Eigen::Index i = 0; i < n; ++i)
        mask(t, i) = rng.bernoulli(mc->p);
  } else if (const auto* ma = std::get_if<Mar>(&mech)) {
    std::vector<double> p(n);
    for (Eigen::Index i = 0; i < n; ++i)
      p[i] = rng.bernoulli(ma->selector_p) ? ma->p_low : ma->p_high;
    for (Eigen::Index t = 0; t < split.train; ++t)
      for (Eigen::Index i = 0; i < n; ++i)
        mask(t, i) = rng.bernoulli(p[i]);
  } else if (const auto* b = std::get_if<BlockMissing>(&mech)) {
    const auto block_rows = static_cast<Eigen::Index>(
        std::floor(b->fraction * static_cast<double>(split.train)));
    for (Eigen::Index t = 0; t < block_rows; ++t)
      for (Eigen::Index i = 0; i < n; ++i) mask(t, i) = true;
  } else if (const auto* v = std::get_if<MissingByValue>(&mech)) {
    for (Eigen::Index t = 0; t < split.train; ++t)
      for (Eigen::Index i = 0; i < n; ++i)
        mask(t, i) = std::abs(values(t, i)) > v->threshold;
  }
  return mask;
}

inline std::vector<Eigen::Index> unobserved_columns(const MaskMatrix& mask,
                                                    const Split& split) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index i = 0; i < mask.cols(); ++i) {
    bool observed = false;
    for (Eigen::Index t = 0; t < split.train && !observed; ++t)
      observed = !mask(t, i);
    if (!observed) cols.push_back(i);
  }
  return cols;
}

}  // namespace detail

/// Applies a missingness mechanism to a fully observed panel. Only
/// training rows are masked. Every column must keep at least one observed
/// training entry: for the random mechanisms the whole mask is redrawn up
/// to 100 times, after which one uniformly chosen training cell per
/// offending column is unmasked. The deterministic mechanisms cannot be
/// redrawn, so a violation there is an error naming the column.
inline Panel apply_mask(const Panel& panel, const MissingMechanism& mech,
                        std::uint64_t seed) {
  validate_mechanism(mech);
  if (!panel.fully_observed())
    throw std::invalid_argument("apply_mask: input panel must be fully observed");
  const bool randomized = std::holds_alternative<Mcar>(mech) ||
                          std::holds_alternative<Mar>(mech);
  Rng rng(seed);
  MaskMatrix mask =
      detail::draw_mask(panel.values(), panel.split(), mech, rng);
  auto bad = detail::unobserved_columns(mask, panel.split());
  if (!bad.empty() && randomized) {
    for (int attempt = 0; attempt < 100 && !bad.empty(); ++attempt) {
      mask = detail::draw_mask(panel.values(), panel.split(), mech, rng);
      bad = detail::unobserved_columns(mask, panel.split());
    }
    for (Eigen::Index i : bad) {
      const auto t = static_cast<Eigen::Index>(
          rng.uniform_index(static_cast<std::uint64_t>(panel.split().train)));
      mask(t, i) = false;
    }
    bad.clear();
  }
  if (!bad.empty())
    throw DataError("apply_mask: column '" + panel.columns()[bad.front()] +
                    "' has no observed entries in the training rows under the " +
                    mechanism_name(mech) + " mechanism");
  return Panel(panel.values(), mask, panel.split(), panel.columns());
}

/// Mean vector of the one-factor model: theta_i = 0.2 * beta_i + alpha_i
/// with beta = 1 and alpha_i equispaced on [-0.3, 0.3].
inline Eigen::VectorXd factor_theta(Eigen::Index n) {
  if (n < 2) throw std::invalid_argument("factor_theta: need n >= 2");
  Eigen::VectorXd theta(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double alpha =
        -0.3 + 0.6 * static_cast<double>(i) / static_cast<double>(n - 1);
    theta(i) = 0.2 + alpha;
  }
  return theta;
}

/// Covariance of the one-factor model: beta beta^T + I with beta = 1.
inline Eigen::MatrixXd factor_omega(Eigen::Index n) {
  if (n < 2) throw std::invalid_argument("factor_omega: need n >= 2");
  return Eigen::MatrixXd::Ones(n, n) + Eigen::MatrixXd::Identity(n, n);
}

/// Simulates a fully observed panel with i.i.d. rows N(theta, Omega) from
/// the one-factor model. Rows are drawn in time order.
inline Panel simulate_factor_panel(Eigen::Index n, const Split& split,
                                   std::uint64_t seed) {
  split.validate();
  const Eigen::VectorXd theta = factor_theta(n);
  const Eigen::MatrixXd omega = factor_omega(n);
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  const Eigen::MatrixXd chol = llt.matrixL();
  Rng rng(seed);
  Eigen::MatrixXd values(split.total(), n);
  for (Eigen::Index t = 0; t < split.total(); ++t)
    values.row(t) = sample_mvn(rng, theta, chol).transpose();
  return Panel(values, MaskMatrix::Constant(split.total(), n, false), split);
}

/// Sample covariance of the given rows (T-1 denominator). A ridge
/// 1e-8 * mean(diagonal) * I is added only when the raw estimate is not
/// positive definite; a zero diagonal falls back to ridge 1e-8 * I so
/// the result is always usable.
inline Eigen::MatrixXd estimate_omega(const Eigen::MatrixXd& x) {
  if (x.rows() < 2)
    throw std::invalid_argument("estimate_omega: need at least two rows");
  if (!x.allFinite())
    throw std::invalid_argument("estimate_omega: rows must be fully observed");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::MatrixXd s =
      centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  s = ((s + s.transpose()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericError("estimate_omega: eigenvalue computation failed");
  if (es.eigenvalues().minCoeff() <= 0.0) {
    const double mean_diag = s.trace() / static_cast<double>(s.rows());
    const double eps = 1e-8 * (mean_diag > 0.0 ? mean_diag : 1.0);
    s += eps * Eigen::MatrixXd::Identity(s.rows(), s.cols());
  }
  return s;
}

inline Eigen::MatrixXd estimate_omega(const Panel& panel) {
  if (!panel.fully_observed())
    throw std::invalid_argument("estimate_omega: panel must be fully observed");
  return estimate_omega(panel.values());
}

}  // namespace baryimp
