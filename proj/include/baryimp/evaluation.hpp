#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/error.hpp"
#include "baryimp/panel.hpp"
#include "baryimp/rng.hpp"

namespace baryimp {

/// Unit-norm portfolio along the training-sample mean of a completed
/// panel. A zero mean has no direction and is rejected.
inline Eigen::VectorXd portfolio_weights(const Eigen::MatrixXd& completed,
                                         const Split& split) {
  split.validate();
  if (completed.rows() != split.total())
    throw std::invalid_argument(
        "portfolio_weights: row count does not match the split");
  if (!completed.allFinite())
    throw DataError("portfolio_weights: panel has non-finite entries");
  const Eigen::VectorXd mean =
      completed.topRows(split.train).colwise().mean().transpose();
  const double norm = mean.norm();
  if (!(norm > 0.0))
    throw DataError("portfolio_weights: training mean is zero, the "
                    "portfolio direction is undefined");
  return mean / norm;
}

/// Difference between the mean portfolio return over the test rows and
/// over the out-of-sample rows of the truth panel.
inline double regret(const Panel& truth, const Eigen::VectorXd& w) {
  if (w.size() != truth.cols())
    throw std::invalid_argument("regret: weight dimension mismatch");
  const Split& sp = truth.split();
  const Eigen::MatrixXd& v = truth.values();
  const double r_test = (v.middleRows(sp.train, sp.test) * w).mean();
  const double r_oos = (v.middleRows(sp.train + sp.test, sp.oos) * w).mean();
  return r_test - r_oos;
}

/// Sample mean and unbiased variance; a single draw has variance zero.
inline std::pair<double, double> mean_and_variance(
    const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_and_variance: no draws");
  double mean = 0.0;
  for (const double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  return {mean, ss / static_cast<double>(xs.size() - 1)};
}

/// Regret summary of one simulation at one budget: the mean and unbiased
/// variance of the regret over the imputations, plus solve bookkeeping.
struct SimulationCell {
  double dr_mean = 0.0;
  double dr_var = 0.0;
  double delta = 0.0;
  bool completed = false;
  bool fallback = false;
};

/// Aggregates over simulations for one (mechanism, budget index) cell.
struct CellSummary {
  double delta = 0.0;  // mean budget across completed simulations
  double ecbias2 = 0.0;
  double ecvar = 0.0;
  double ecmse = 0.0;
  double se_ecbias2 = 0.0;
  double se_ecvar = 0.0;
  double se_ecmse = 0.0;
  double ecmse_ci_lo = 0.0;
  double ecmse_ci_hi = 0.0;
  int requested = 0;
  int completed = 0;
  int fallback = 0;
  int failed = 0;
};

namespace detail {

struct EcmseParts {
  double ecbias2 = 0.0;
  double ecvar = 0.0;
  double ecmse = 0.0;
};

/// One-sided squared bias plus average within-simulation variance.
inline EcmseParts ecmse_parts(const std::vector<double>& means,
                              const std::vector<double>& vars) {
  EcmseParts p;
  double grand = 0.0;
  for (const double m : means) grand += m;
  grand /= static_cast<double>(means.size());
  const double clamped = std::max(grand, 0.0);
  p.ecbias2 = clamped * clamped;
  for (const double v : vars) p.ecvar += v;
  p.ecvar /= static_cast<double>(vars.size());
  p.ecmse = p.ecbias2 + p.ecvar;
  return p;
}

}  // namespace detail

/// Collapses the per-simulation cells of one budget into the report row.
/// Standard errors and the ECMSE interval come from a nonparametric
/// bootstrap over completed simulations; failed simulations only appear
/// in the counts. With every simulation failed the estimates are NaN.
inline CellSummary summarize_cell(const std::vector<SimulationCell>& cells,
                                  std::uint64_t bootstrap_seed,
                                  int resamples = 1000) {
  if (cells.empty())
    throw std::invalid_argument("summarize_cell: no simulations");
  if (resamples < 1)
    throw std::invalid_argument("summarize_cell: need resamples >= 1");
  CellSummary out;
  out.requested = static_cast<int>(cells.size());
  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : cells) {
    if (!c.completed) {
      ++out.failed;
      continue;
    }
    ++out.completed;
    if (c.fallback) ++out.fallback;
    means.push_back(c.dr_mean);
    vars.push_back(c.dr_var);
    out.delta += c.delta;
  }
  if (out.completed == 0) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    out.delta = nan;
    out.ecbias2 = out.ecvar = out.ecmse = nan;
    out.se_ecbias2 = out.se_ecvar = out.se_ecmse = nan;
    out.ecmse_ci_lo = out.ecmse_ci_hi = nan;
    return out;
  }
  out.delta /= static_cast<double>(out.completed);
  const detail::EcmseParts point = detail::ecmse_parts(means, vars);
  out.ecbias2 = point.ecbias2;
  out.ecvar = point.ecvar;
  out.ecmse = point.ecmse;

  Rng rng(bootstrap_seed);
  const std::size_t s = means.size();
  std::vector<double> bm(s);
  std::vector<double> bv(s);
  std::vector<double> boot_bias(static_cast<std::size_t>(resamples));
  std::vector<double> boot_var(static_cast<std::size_t>(resamples));
  std::vector<double> boot_mse(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t j = rng.uniform_index(s);
      bm[i] = means[j];
      bv[i] = vars[j];
    }
    const detail::EcmseParts p = detail::ecmse_parts(bm, bv);
    boot_bias[static_cast<std::size_t>(b)] = p.ecbias2;
    boot_var[static_cast<std::size_t>(b)] = p.ecvar;
    boot_mse[static_cast<std::size_t>(b)] = p.ecmse;
  }
  out.se_ecbias2 = std::sqrt(mean_and_variance(boot_bias).second);
  out.se_ecvar = std::sqrt(mean_and_variance(boot_var).second);
  out.se_ecmse = std::sqrt(mean_and_variance(boot_mse).second);
  std::sort(boot_mse.begin(), boot_mse.end());
  const auto quantile = [&boot_mse](double q) {
    const double pos = q * static_cast<double>(boot_mse.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return (1.0 - frac) * boot_mse[lo] + frac * boot_mse[hi];
  };
  out.ecmse_ci_lo = quantile(0.025);
  out.ecmse_ci_hi = quantile(0.975);
  return out;
}

/// Sweep result for one mechanism: one summary row per budget index.
struct EvalReport {
  std::string mechanism;
  std::vector<CellSummary> cells;
  int simulations = 0;
  int imputations = 0;
  std::uint64_t seed = 0;

  /// Grid argmin of the estimated ECMSE; rows without a single completed
  /// simulation are skipped. -1 when nothing completed at all.
  [[nodiscard]] int argmin_index() const {
    int best = -1;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (std::isnan(cells[i].ecmse)) continue;
      if (best < 0 || cells[i].ecmse < cells[static_cast<std::size_t>(best)].ecmse)
        best = static_cast<int>(i);
    }
    return best;
  }
};

}  // namespace baryimp
