#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "baryimp/barycenter.hpp"
#include "baryimp/bias.hpp"
#include "baryimp/consensus.hpp"
#include "baryimp/error.hpp"
#include "baryimp/evaluation.hpp"
#include "baryimp/gaussian.hpp"
#include "baryimp/imputation.hpp"
#include "baryimp/panel_csv.hpp"
#include "baryimp/posterior.hpp"

namespace baryimp {

using Json = nlohmann::json;

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw DataError("write to '" + path + "' failed");
}

/// FNV-1a, 64-bit; used for content hashes in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[x & 0xf];
    x >>= 4;
  }
  return s;
}

inline Json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw DataError("'" + path + "' is not valid JSON");
  return j;
}

inline void write_json_file(const std::string& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

namespace detail {

inline const Json& require_key(const Json& j, const std::string& key,
                               const std::string& what) {
  const auto it = j.find(key);
  if (it == j.end())
    throw DataError(what + ": missing key '" + key + "'");
  return *it;
}

/// null round-trips as NaN (the JSON grammar has no non-finite numbers).
inline double json_double(const Json& j, const std::string& what) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw DataError(what + ": expected a number");
  return j.get<double>();
}

}  // namespace detail

inline Json to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::VectorXd vector_from_json(const Json& j,
                                        const std::string& what) {
  if (!j.is_array()) throw DataError(what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = detail::json_double(j[i], what);
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j,
                                        const std::string& what) {
  if (!j.is_array() || j.empty())
    throw DataError(what + ": expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw DataError(what + ": rows must be non-empty arrays");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()),
                    static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw DataError(what + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          detail::json_double(j[r][c], what);
  }
  return m;
}

inline Json gaussian_to_json(const Gaussian& g) {
  return Json{{"mean", to_json(g.mean())}, {"cov", to_json(g.cov())}};
}

inline Gaussian gaussian_from_json(const Json& j) {
  return Gaussian(
      vector_from_json(detail::require_key(j, "mean", "gaussian"), "gaussian mean"),
      matrix_from_json(detail::require_key(j, "cov", "gaussian"), "gaussian cov"));
}

inline Json posterior_set_to_json(const PosteriorSet& set) {
  Json posts = Json::array();
  for (const auto& g : set.posteriors) posts.push_back(gaussian_to_json(g));
  Json times = Json::array();
  for (const auto t : set.schedule.times) times.push_back(t);
  Json j{{"posteriors", std::move(posts)}, {"times", std::move(times)}};
  if (set.basis.has_value()) {
    Json diags = Json::array();
    for (const auto& d : set.basis->diagonals) diags.push_back(to_json(d));
    j["basis"] = Json{{"v", to_json(set.basis->V)}, {"diagonals", std::move(diags)}};
  } else {
    j["basis"] = nullptr;
  }
  return j;
}

inline PosteriorSet posterior_set_from_json(const Json& j) {
  const Json& posts = detail::require_key(j, "posteriors", "posterior set");
  if (!posts.is_array() || posts.empty())
    throw DataError("posterior set: 'posteriors' must be a non-empty array");
  std::vector<Gaussian> gs;
  for (const auto& p : posts) gs.push_back(gaussian_from_json(p));
  const Json& times = detail::require_key(j, "times", "posterior set");
  if (!times.is_array())
    throw DataError("posterior set: 'times' must be an array");
  std::vector<Eigen::Index> ts;
  for (const auto& t : times) {
    if (!t.is_number_integer())
      throw DataError("posterior set: times must be integers");
    ts.push_back(t.get<Eigen::Index>());
  }
  std::optional<EigenBasis> basis;
  const auto bit = j.find("basis");
  if (bit != j.end() && !bit->is_null()) {
    const Json& diags = detail::require_key(*bit, "diagonals", "basis");
    if (!diags.is_array()) throw DataError("basis: 'diagonals' must be an array");
    std::vector<Eigen::VectorXd> ds;
    for (const auto& d : diags) ds.push_back(vector_from_json(d, "basis diagonal"));
    basis.emplace(matrix_from_json(detail::require_key(*bit, "v", "basis"), "basis v"),
                  std::move(ds));
  }
  return PosteriorSet(std::move(gs), TruncationSchedule(std::move(ts)),
                      std::move(basis));
}

inline Mechanism mechanism_from_label(const std::string& s) {
  if (s == "forward_kl") return Mechanism::kForwardKl;
  if (s == "wasserstein") return Mechanism::kWasserstein;
  if (s == "restricted_wasserstein") return Mechanism::kRestrictedWasserstein;
  if (s == "backward_kl") return Mechanism::kBackwardKl;
  throw ConfigError("unknown mechanism '" + s + "'");
}

inline SolverStatus status_from_label(const std::string& s) {
  if (s == "optimal") return SolverStatus::kOptimal;
  if (s == "local") return SolverStatus::kLocal;
  if (s == "fallback_anchor") return SolverStatus::kFallbackAnchor;
  if (s == "failed") return SolverStatus::kFailed;
  throw DataError("unknown solver status '" + s + "'");
}

inline ImputeMode impute_mode_from_label(const std::string& s) {
  if (s == "cond_expect") return ImputeMode::kCondExpect;
  if (s == "full_bayes") return ImputeMode::kFullBayes;
  throw ConfigError("unknown imputation mode '" + s + "'");
}

inline Json consensus_solution_to_json(const ConsensusSolution& sol) {
  Json j{{"lambda", to_json(sol.lambda)},
         {"delta", sol.delta},
         {"objective", sol.objective},
         {"bias_attained", sol.bias_attained},
         {"status", status_label(sol.status)}};
  if (const auto* g = std::get_if<Gaussian>(&sol.aggregated)) {
    j["aggregated"] = Json{{"type", "gaussian"},
                           {"gaussian", gaussian_to_json(*g)}};
  } else {
    const auto& mix = std::get<GaussianMixture>(sol.aggregated);
    Json comps = Json::array();
    for (const auto& c : mix.components()) comps.push_back(gaussian_to_json(c));
    j["aggregated"] = Json{{"type", "mixture"},
                           {"components", std::move(comps)},
                           {"weights", to_json(mix.weights())}};
  }
  return j;
}

inline ConsensusSolution consensus_solution_from_json(const Json& j) {
  const Json& agg = detail::require_key(j, "aggregated", "solution");
  const std::string type =
      detail::require_key(agg, "type", "solution aggregated").get<std::string>();
  std::variant<Gaussian, GaussianMixture> aggregated =
      Gaussian(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
  if (type == "gaussian") {
    aggregated = gaussian_from_json(
        detail::require_key(agg, "gaussian", "solution aggregated"));
  } else if (type == "mixture") {
    const Json& comps = detail::require_key(agg, "components", "solution");
    std::vector<Gaussian> gs;
    for (const auto& c : comps) gs.push_back(gaussian_from_json(c));
    aggregated = GaussianMixture(
        std::move(gs),
        vector_from_json(detail::require_key(agg, "weights", "solution"),
                         "solution weights"));
  } else {
    throw DataError("solution: unknown aggregated type '" + type + "'");
  }
  return ConsensusSolution{
      vector_from_json(detail::require_key(j, "lambda", "solution"),
                       "solution lambda"),
      std::move(aggregated),
      detail::json_double(detail::require_key(j, "delta", "solution"),
                          "solution delta"),
      detail::json_double(detail::require_key(j, "objective", "solution"),
                          "solution objective"),
      detail::json_double(detail::require_key(j, "bias_attained", "solution"),
                          "solution bias"),
      status_from_label(
          detail::require_key(j, "status", "solution").get<std::string>())};
}

inline Json cell_summary_to_json(const CellSummary& c) {
  const auto num = [](double x) {
    return std::isfinite(x) ? Json(x) : Json(nullptr);
  };
  return Json{{"delta", num(c.delta)},
              {"ecbias2", num(c.ecbias2)},
              {"ecvar", num(c.ecvar)},
              {"ecmse", num(c.ecmse)},
              {"se_ecbias2", num(c.se_ecbias2)},
              {"se_ecvar", num(c.se_ecvar)},
              {"se_ecmse", num(c.se_ecmse)},
              {"ecmse_ci_lo", num(c.ecmse_ci_lo)},
              {"ecmse_ci_hi", num(c.ecmse_ci_hi)},
              {"requested", c.requested},
              {"completed", c.completed},
              {"fallback", c.fallback},
              {"failed", c.failed}};
}

inline CellSummary cell_summary_from_json(const Json& j) {
  CellSummary c;
  const auto d = [&j](const char* key) {
    return detail::json_double(detail::require_key(j, key, "report cell"),
                               std::string("report cell ") + key);
  };
  c.delta = d("delta");
  c.ecbias2 = d("ecbias2");
  c.ecvar = d("ecvar");
  c.ecmse = d("ecmse");
  c.se_ecbias2 = d("se_ecbias2");
  c.se_ecvar = d("se_ecvar");
  c.se_ecmse = d("se_ecmse");
  c.ecmse_ci_lo = d("ecmse_ci_lo");
  c.ecmse_ci_hi = d("ecmse_ci_hi");
  c.requested = detail::require_key(j, "requested", "report cell").get<int>();
  c.completed = detail::require_key(j, "completed", "report cell").get<int>();
  c.fallback = detail::require_key(j, "fallback", "report cell").get<int>();
  c.failed = detail::require_key(j, "failed", "report cell").get<int>();
  return c;
}

inline Json eval_report_to_json(const EvalReport& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) cells.push_back(cell_summary_to_json(c));
  return Json{{"mechanism", r.mechanism},
              {"cells", std::move(cells)},
              {"simulations", r.simulations},
              {"imputations", r.imputations},
              {"seed", r.seed},
              {"argmin_index", r.argmin_index()}};
}

inline EvalReport eval_report_from_json(const Json& j) {
  EvalReport r;
  r.mechanism = detail::require_key(j, "mechanism", "report").get<std::string>();
  const Json& cells = detail::require_key(j, "cells", "report");
  if (!cells.is_array()) throw DataError("report: 'cells' must be an array");
  for (const auto& c : cells) r.cells.push_back(cell_summary_from_json(c));
  r.simulations = detail::require_key(j, "simulations", "report").get<int>();
  r.imputations = detail::require_key(j, "imputations", "report").get<int>();
  r.seed = detail::require_key(j, "seed", "report").get<std::uint64_t>();
  return r;
}

/// Tidy CSV over all mechanisms: one row per (mechanism, budget index).
inline std::string report_table_csv(const std::vector<EvalReport>& reports) {
  std::string out =
      "mechanism,delta,ecmse,ecbias2,ecvar,se_ecmse,se_ecbias2,se_ecvar,"
      "ecmse_ci_lo,ecmse_ci_hi,requested,completed,fallback,failed\n";
  for (const auto& r : reports) {
    for (const auto& c : r.cells) {
      out += r.mechanism;
      for (const double v : {c.delta, c.ecmse, c.ecbias2, c.ecvar, c.se_ecmse,
                             c.se_ecbias2, c.se_ecvar, c.ecmse_ci_lo,
                             c.ecmse_ci_hi}) {
        out += ',';
        out += detail::format_double(v);
      }
      for (const int v : {c.requested, c.completed, c.fallback, c.failed}) {
        out += ',';
        out += std::to_string(v);
      }
      out += '\n';
    }
  }
  return out;
}

/// Long-format plot data: one (mechanism, series, delta, value, se) row
/// per curve point, ready for any external plotter.
inline std::string plot_data_csv(const std::vector<EvalReport>& reports) {
  std::string out = "mechanism,series,delta,value,se\n";
  for (const auto& r : reports) {
    const auto emit = [&out, &r](const char* series, double delta, double value,
                                 double se) {
      out += r.mechanism;
      out += ',';
      out += series;
      out += ',';
      out += detail::format_double(delta);
      out += ',';
      out += detail::format_double(value);
      out += ',';
      out += detail::format_double(se);
      out += '\n';
    };
    for (const auto& c : r.cells) {
      emit("ecmse", c.delta, c.ecmse, c.se_ecmse);
      emit("ecbias2", c.delta, c.ecbias2, c.se_ecbias2);
      emit("ecvar", c.delta, c.ecvar, c.se_ecvar);
    }
  }
  return out;
}

}  // namespace baryimp
