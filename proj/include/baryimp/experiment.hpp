#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "baryimp/consensus.hpp"
#include "baryimp/error.hpp"
#include "baryimp/evaluation.hpp"
#include "baryimp/imputation.hpp"
#include "baryimp/panel.hpp"
#include "baryimp/panel_csv.hpp"
#include "baryimp/posterior.hpp"
#include "baryimp/serialize.hpp"

namespace baryimp {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// Full description of one experiment run. Parsed from a JSON config
/// where unknown keys anywhere in the tree are hard errors.
struct ExperimentConfig {
  enum class Source { kSimulate, kCsv };

  Source source = Source::kSimulate;
  int n = 10;                  // simulate only; csv infers from the file
  std::string csv_path;
  Split split{100, 100, 1000};
  bool omega_from_sample = false;
  Prior prior;                 // empty = flat
  int k = 5;
  std::vector<Mechanism> mechanisms;
  BiasSet bias = EuclideanBall{};
  int delta_count = 10;
  std::optional<MissingMechanism> missing;
  int simulations = 100;
  int imputations = 10;
  ImputeMode mode = ImputeMode::kCondExpect;
  std::uint64_t seed = 20230815;
  double annualization = 1.0;
  double failure_budget = 0.1;
  std::string output_dir;
};

namespace detail {

inline void check_keys(const Json& j,
                       std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object())
    throw ConfigError("config: " + where + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (item.key() == a) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
  }
}

inline const Json& cfg_key(const Json& j, const char* key,
                           const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end())
    throw ConfigError("config: " + where + " is missing key '" + key + "'");
  return *it;
}

inline double cfg_double(const Json& j, const std::string& where) {
  if (!j.is_number())
    throw ConfigError("config: " + where + " must be a number");
  return j.get<double>();
}

inline int cfg_int(const Json& j, const std::string& where) {
  if (!j.is_number_integer())
    throw ConfigError("config: " + where + " must be an integer");
  return j.get<int>();
}

inline std::string cfg_string(const Json& j, const std::string& where) {
  if (!j.is_string())
    throw ConfigError("config: " + where + " must be a string");
  return j.get<std::string>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  detail::check_keys(
      j,
      {"source", "split", "omega", "prior", "k", "mechanisms", "bias",
       "delta_count", "missing", "simulations", "imputations", "mode", "seed",
       "annualization", "failure_budget", "output_dir"},
      "the top level");
  ExperimentConfig cfg;

  const Json& src = detail::cfg_key(j, "source", "the top level");
  const std::string src_type =
      detail::cfg_string(detail::cfg_key(src, "type", "source"), "source.type");
  if (src_type == "simulate") {
    detail::check_keys(src, {"type", "n"}, "source");
    cfg.source = ExperimentConfig::Source::kSimulate;
    cfg.n = detail::cfg_int(detail::cfg_key(src, "n", "source"), "source.n");
    if (cfg.n < 2) throw ConfigError("config: source.n must be >= 2");
  } else if (src_type == "csv") {
    detail::check_keys(src, {"type", "path"}, "source");
    cfg.source = ExperimentConfig::Source::kCsv;
    cfg.csv_path =
        detail::cfg_string(detail::cfg_key(src, "path", "source"), "source.path");
    if (cfg.csv_path.empty())
      throw ConfigError("config: source.path must be nonempty");
    cfg.n = 0;
  } else {
    throw ConfigError("config: source.type must be 'simulate' or 'csv'");
  }

  const Json& sp = detail::cfg_key(j, "split", "the top level");
  detail::check_keys(sp, {"train", "test", "oos"}, "split");
  cfg.split.train =
      detail::cfg_int(detail::cfg_key(sp, "train", "split"), "split.train");
  cfg.split.test =
      detail::cfg_int(detail::cfg_key(sp, "test", "split"), "split.test");
  cfg.split.oos = detail::cfg_int(detail::cfg_key(sp, "oos", "split"), "split.oos");
  try {
    cfg.split.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  const std::string omega =
      detail::cfg_string(detail::cfg_key(j, "omega", "the top level"), "omega");
  if (omega == "truth") {
    cfg.omega_from_sample = false;
    if (cfg.source == ExperimentConfig::Source::kCsv)
      throw ConfigError(
          "config: omega 'truth' is only available for simulated data");
  } else if (omega == "sample") {
    cfg.omega_from_sample = true;
  } else {
    throw ConfigError("config: omega must be 'truth' or 'sample'");
  }

  const Json& prior = detail::cfg_key(j, "prior", "the top level");
  const std::string prior_type =
      detail::cfg_string(detail::cfg_key(prior, "type", "prior"), "prior.type");
  if (prior_type == "flat") {
    detail::check_keys(prior, {"type"}, "prior");
  } else if (prior_type == "gaussian") {
    detail::check_keys(prior, {"type", "mean", "cov"}, "prior");
    try {
      cfg.prior.emplace(
          vector_from_json(detail::cfg_key(prior, "mean", "prior"), "prior.mean"),
          matrix_from_json(detail::cfg_key(prior, "cov", "prior"), "prior.cov"));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: prior: ") + e.what());
    }
    if (cfg.source == ExperimentConfig::Source::kSimulate &&
        cfg.prior->dim() != cfg.n)
      throw ConfigError("config: prior dimension does not match source.n");
  } else {
    throw ConfigError("config: prior.type must be 'flat' or 'gaussian'");
  }

  cfg.k = detail::cfg_int(detail::cfg_key(j, "k", "the top level"), "k");
  if (cfg.k < 2) throw ConfigError("config: k must be >= 2");
  if (cfg.k > cfg.split.test + 1)
    throw ConfigError("config: k must be <= split.test + 1");

  const Json& mechs = detail::cfg_key(j, "mechanisms", "the top level");
  if (!mechs.is_array() || mechs.empty())
    throw ConfigError("config: mechanisms must be a non-empty array");
  for (const auto& m : mechs) {
    const Mechanism mech = mechanism_from_label(detail::cfg_string(m, "mechanism"));
    for (const Mechanism seen : cfg.mechanisms)
      if (seen == mech)
        throw ConfigError("config: duplicate mechanism '" +
                          mechanism_label(mech) + "'");
    cfg.mechanisms.push_back(mech);
  }

  const Json& bias = detail::cfg_key(j, "bias", "the top level");
  const std::string bias_type =
      detail::cfg_string(detail::cfg_key(bias, "type", "bias"), "bias.type");
  if (bias_type == "euclidean") {
    detail::check_keys(bias, {"type"}, "bias");
    cfg.bias = EuclideanBall{};
  } else if (bias_type == "ones") {
    detail::check_keys(bias, {"type"}, "bias");
    cfg.bias = SingletonOnes{};
  } else if (bias_type == "polyhedron") {
    detail::check_keys(bias, {"type", "a", "b"}, "bias");
    Polyhedron poly;
    try {
      poly.A = matrix_from_json(detail::cfg_key(bias, "a", "bias"), "bias.a");
      poly.b = vector_from_json(detail::cfg_key(bias, "b", "bias"), "bias.b");
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: bias: ") + e.what());
    }
    if (poly.A.rows() != poly.b.size() || poly.A.rows() < 1)
      throw ConfigError("config: bias polyhedron shapes disagree");
    if (cfg.source == ExperimentConfig::Source::kSimulate &&
        poly.A.cols() != cfg.n)
      throw ConfigError("config: bias polyhedron width does not match source.n");
    cfg.bias = std::move(poly);
  } else {
    throw ConfigError(
        "config: bias.type must be 'euclidean', 'ones' or 'polyhedron'");
  }

  cfg.delta_count = detail::cfg_int(
      detail::cfg_key(j, "delta_count", "the top level"), "delta_count");
  if (cfg.delta_count < 2) throw ConfigError("config: delta_count must be >= 2");

  const auto mit = j.find("missing");
  if (mit != j.end() && !mit->is_null()) {
    const Json& mj = *mit;
    const std::string mtype =
        detail::cfg_string(detail::cfg_key(mj, "type", "missing"), "missing.type");
    MissingMechanism mech;
    if (mtype == "mcar") {
      detail::check_keys(mj, {"type", "p"}, "missing");
      mech = Mcar{detail::cfg_double(detail::cfg_key(mj, "p", "missing"),
                                     "missing.p")};
    } else if (mtype == "mar") {
      detail::check_keys(mj, {"type", "p_low", "p_high", "selector_p"},
                         "missing");
      mech = Mar{detail::cfg_double(detail::cfg_key(mj, "p_low", "missing"),
                                    "missing.p_low"),
                 detail::cfg_double(detail::cfg_key(mj, "p_high", "missing"),
                                    "missing.p_high"),
                 detail::cfg_double(detail::cfg_key(mj, "selector_p", "missing"),
                                    "missing.selector_p")};
    } else if (mtype == "block") {
      detail::check_keys(mj, {"type", "fraction"}, "missing");
      mech = BlockMissing{detail::cfg_double(
          detail::cfg_key(mj, "fraction", "missing"), "missing.fraction")};
    } else if (mtype == "by_value") {
      detail::check_keys(mj, {"type", "threshold"}, "missing");
      mech = MissingByValue{detail::cfg_double(
          detail::cfg_key(mj, "threshold", "missing"), "missing.threshold")};
    } else {
      throw ConfigError(
          "config: missing.type must be 'mcar', 'mar', 'block' or 'by_value'");
    }
    try {
      validate_mechanism(mech);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: missing: ") + e.what());
    }
    cfg.missing = mech;
  }
  if (cfg.source == ExperimentConfig::Source::kSimulate && !cfg.missing)
    throw ConfigError("config: simulated data needs a 'missing' mechanism");

  cfg.simulations = detail::cfg_int(
      detail::cfg_key(j, "simulations", "the top level"), "simulations");
  if (cfg.simulations < 1)
    throw ConfigError("config: simulations must be >= 1");
  cfg.imputations = detail::cfg_int(
      detail::cfg_key(j, "imputations", "the top level"), "imputations");
  if (cfg.imputations < 1)
    throw ConfigError("config: imputations must be >= 1");

  cfg.mode = impute_mode_from_label(detail::cfg_string(
      detail::cfg_key(j, "mode", "the top level"), "mode"));

  const Json& seed = detail::cfg_key(j, "seed", "the top level");
  if (!seed.is_number_unsigned() && !seed.is_number_integer())
    throw ConfigError("config: seed must be a nonnegative integer");
  if (seed.is_number_integer() && seed.get<std::int64_t>() < 0)
    throw ConfigError("config: seed must be a nonnegative integer");
  cfg.seed = seed.get<std::uint64_t>();

  const auto ait = j.find("annualization");
  if (ait != j.end()) {
    cfg.annualization = detail::cfg_double(*ait, "annualization");
    if (!(cfg.annualization > 0.0) || !std::isfinite(cfg.annualization))
      throw ConfigError("config: annualization must be positive and finite");
    if (cfg.source == ExperimentConfig::Source::kSimulate &&
        cfg.annualization != 1.0)
      throw ConfigError(
          "config: annualization applies to csv input only; simulated panels "
          "are already in model units");
  }

  const auto fit = j.find("failure_budget");
  if (fit != j.end()) {
    cfg.failure_budget = detail::cfg_double(*fit, "failure_budget");
    if (!(cfg.failure_budget >= 0.0 && cfg.failure_budget <= 1.0))
      throw ConfigError("config: failure_budget must lie in [0, 1]");
  }

  const auto oit = j.find("output_dir");
  if (oit != j.end()) cfg.output_dir = detail::cfg_string(*oit, "output_dir");

  return cfg;
}

inline Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  if (cfg.source == ExperimentConfig::Source::kSimulate) {
    j["source"] = Json{{"type", "simulate"}, {"n", cfg.n}};
  } else {
    j["source"] = Json{{"type", "csv"}, {"path", cfg.csv_path}};
  }
  j["split"] = Json{{"train", cfg.split.train},
                    {"test", cfg.split.test},
                    {"oos", cfg.split.oos}};
  j["omega"] = cfg.omega_from_sample ? "sample" : "truth";
  if (cfg.prior.has_value()) {
    j["prior"] = Json{{"type", "gaussian"},
                      {"mean", to_json(cfg.prior->mean())},
                      {"cov", to_json(cfg.prior->cov())}};
  } else {
    j["prior"] = Json{{"type", "flat"}};
  }
  j["k"] = cfg.k;
  Json mechs = Json::array();
  for (const Mechanism m : cfg.mechanisms) mechs.push_back(mechanism_label(m));
  j["mechanisms"] = std::move(mechs);
  if (std::holds_alternative<EuclideanBall>(cfg.bias)) {
    j["bias"] = Json{{"type", "euclidean"}};
  } else if (std::holds_alternative<SingletonOnes>(cfg.bias)) {
    j["bias"] = Json{{"type", "ones"}};
  } else {
    const auto& poly = std::get<Polyhedron>(cfg.bias);
    j["bias"] = Json{{"type", "polyhedron"},
                     {"a", to_json(poly.A)},
                     {"b", to_json(poly.b)}};
  }
  j["delta_count"] = cfg.delta_count;
  if (cfg.missing.has_value()) {
    if (const auto* mc = std::get_if<Mcar>(&*cfg.missing)) {
      j["missing"] = Json{{"type", "mcar"}, {"p", mc->p}};
    } else if (const auto* ma = std::get_if<Mar>(&*cfg.missing)) {
      j["missing"] = Json{{"type", "mar"},
                          {"p_low", ma->p_low},
                          {"p_high", ma->p_high},
                          {"selector_p", ma->selector_p}};
    } else if (const auto* b = std::get_if<BlockMissing>(&*cfg.missing)) {
      j["missing"] = Json{{"type", "block"}, {"fraction", b->fraction}};
    } else {
      j["missing"] = Json{{"type", "by_value"},
                          {"threshold",
                           std::get<MissingByValue>(*cfg.missing).threshold}};
    }
  } else {
    j["missing"] = nullptr;
  }
  j["simulations"] = cfg.simulations;
  j["imputations"] = cfg.imputations;
  j["mode"] = impute_mode_label(cfg.mode);
  j["seed"] = cfg.seed;
  j["annualization"] = cfg.annualization;
  j["failure_budget"] = cfg.failure_budget;
  if (!cfg.output_dir.empty()) j["output_dir"] = cfg.output_dir;
  return j;
}

/// The scaled reference setup: simulated 10-asset factor panel,
/// 100/100/1000 split, MCAR at 0.5, flat prior, known covariance, K = 5,
/// three consensus mechanisms over a 10-point budget grid, 100
/// simulations of 10 conditional-expectation imputations.
inline Json default_config_json() {
  return Json{
      {"source", Json{{"type", "simulate"}, {"n", 10}}},
      {"split", Json{{"train", 100}, {"test", 100}, {"oos", 1000}}},
      {"omega", "truth"},
      {"prior", Json{{"type", "flat"}}},
      {"k", 5},
      {"mechanisms",
       Json::array({"forward_kl", "wasserstein", "restricted_wasserstein"})},
      {"bias", Json{{"type", "euclidean"}}},
      {"delta_count", 10},
      {"missing", Json{{"type", "mcar"}, {"p", 0.5}}},
      {"simulations", 100},
      {"imputations", 10},
      {"mode", "cond_expect"},
      {"seed", 20230815},
      {"annualization", 1.0},
      {"failure_budget", 0.1}};
}

/// One (simulation, mechanism, budget index) outcome.
struct CellRecord {
  int sim = 0;
  Mechanism mechanism = Mechanism::kForwardKl;
  int delta_index = 0;
  double delta = 0.0;
  double dr_mean = 0.0;
  double dr_var = 0.0;
  bool completed = false;
  bool fallback = false;
  std::string error;
};

inline Json cells_to_json(const ExperimentConfig& cfg,
                          const std::vector<CellRecord>& cells) {
  Json arr = Json::array();
  for (const auto& c : cells) {
    arr.push_back(Json{{"sim", c.sim},
                       {"mechanism", mechanism_label(c.mechanism)},
                       {"delta_index", c.delta_index},
                       {"delta", c.delta},
                       {"dr_mean", c.dr_mean},
                       {"dr_var", c.dr_var},
                       {"completed", c.completed},
                       {"fallback", c.fallback},
                       {"error", c.error}});
  }
  return Json{{"simulations", cfg.simulations},
              {"imputations", cfg.imputations},
              {"seed", cfg.seed},
              {"cells", std::move(arr)}};
}

inline std::vector<CellRecord> cells_from_json(const Json& j) {
  const Json& arr = detail::require_key(j, "cells", "cells file");
  if (!arr.is_array()) throw DataError("cells file: 'cells' must be an array");
  std::vector<CellRecord> out;
  for (const auto& c : arr) {
    CellRecord r;
    r.sim = detail::require_key(c, "sim", "cell").get<int>();
    r.mechanism = mechanism_from_label(
        detail::require_key(c, "mechanism", "cell").get<std::string>());
    r.delta_index = detail::require_key(c, "delta_index", "cell").get<int>();
    r.delta = detail::json_double(detail::require_key(c, "delta", "cell"),
                                  "cell delta");
    r.dr_mean = detail::json_double(detail::require_key(c, "dr_mean", "cell"),
                                    "cell dr_mean");
    r.dr_var = detail::json_double(detail::require_key(c, "dr_var", "cell"),
                                   "cell dr_var");
    r.completed = detail::require_key(c, "completed", "cell").get<bool>();
    r.fallback = detail::require_key(c, "fallback", "cell").get<bool>();
    r.error = detail::require_key(c, "error", "cell").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

// ---- per-simulation pipeline ----

inline Panel load_csv_truth(const ExperimentConfig& cfg) {
  Panel p = read_csv(cfg.csv_path, cfg.split);
  if (cfg.annualization != 1.0) p = scale_panel(p, cfg.annualization);
  return p;
}

inline Panel simulate_truth(const ExperimentConfig& cfg, int sim) {
  if (cfg.source == ExperimentConfig::Source::kCsv) return load_csv_truth(cfg);
  return simulate_factor_panel(
      cfg.n, cfg.split,
      derive_seed(cfg.seed, {stream::panel, static_cast<std::uint64_t>(sim)}));
}

inline Panel mask_truth(const ExperimentConfig& cfg, const Panel& truth,
                        int sim) {
  if (!cfg.missing.has_value()) return truth;
  return apply_mask(
      truth, *cfg.missing,
      derive_seed(cfg.seed, {stream::mask, static_cast<std::uint64_t>(sim)}));
}

/// Covariance the run treats as known: the factor-model truth, or the
/// sample covariance of the fully observed training rows.
inline Eigen::MatrixXd experiment_omega(const ExperimentConfig& cfg,
                                        const Panel& masked) {
  if (!cfg.omega_from_sample) return factor_omega(masked.cols());
  std::vector<Eigen::Index> complete;
  for (Eigen::Index t = 0; t < masked.split().train; ++t) {
    bool full = true;
    for (Eigen::Index i = 0; i < masked.cols() && full; ++i)
      full = !masked.is_missing(t, i);
    if (full) complete.push_back(t);
  }
  if (complete.size() < 2)
    throw DataError(
        "experiment_omega: fewer than two fully observed training rows; "
        "cannot estimate the covariance");
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(complete.size()),
                       masked.cols());
  for (std::size_t r = 0; r < complete.size(); ++r)
    rows.row(static_cast<Eigen::Index>(r)) = masked.values().row(complete[r]);
  return estimate_omega(rows);
}

struct PosteriorBundle {
  PosteriorSet raw;
  std::optional<PosteriorSet> projected;
};

inline bool mechanism_needs_basis(Mechanism m) {
  return m != Mechanism::kBackwardKl;
}

inline PosteriorBundle build_posteriors(const ExperimentConfig& cfg,
                                        const Panel& masked,
                                        const Eigen::MatrixXd& omega) {
  if (cfg.prior.has_value() && cfg.prior->dim() != masked.cols())
    throw DataError("build_posteriors: prior dimension does not match panel");
  const TruncationSchedule schedule =
      make_schedule(cfg.k, cfg.split.train, cfg.split.test);
  PosteriorBundle bundle{
      make_posterior_set(masked, omega, schedule, cfg.prior), std::nullopt};
  bool needs = false;
  for (const Mechanism m : cfg.mechanisms) needs = needs || mechanism_needs_basis(m);
  if (needs)
    bundle.projected = project_to_basis(bundle.raw, ProjectionMode::kForwardKl);
  return bundle;
}

/// Bias set a mechanism actually optimizes against: the transformed
/// l1 ball in the shared basis for forward KL, the plain Euclidean ball
/// for the restricted mechanism, the configured set otherwise.
inline BiasSet mechanism_bias(const ExperimentConfig& cfg, Mechanism mech,
                              const PosteriorBundle& bundle) {
  if (mech == Mechanism::kForwardKl) {
    if (!bundle.projected.has_value() || !bundle.projected->basis.has_value())
      throw NumericError("mechanism_bias: projected posteriors missing");
    return TransformedL1Ball{bundle.projected->basis->V};
  }
  if (mech == Mechanism::kRestrictedWasserstein) return EuclideanBall{};
  return cfg.bias;
}

inline const PosteriorSet& mechanism_set(Mechanism mech,
                                         const PosteriorBundle& bundle) {
  if (mechanism_needs_basis(mech)) {
    if (!bundle.projected.has_value())
      throw NumericError("mechanism_set: projected posteriors missing");
    return *bundle.projected;
  }
  return bundle.raw;
}

inline std::vector<double> mechanism_grid(const ExperimentConfig& cfg,
                                          Mechanism mech,
                                          const PosteriorBundle& bundle) {
  const BiasSet bias = mechanism_bias(cfg, mech, bundle);
  return delta_grid(delta_max(mechanism_set(mech, bundle), mech, bias),
                    cfg.delta_count);
}

inline ConsensusSolution solve_cell(const ExperimentConfig& cfg, Mechanism mech,
                                    const PosteriorBundle& bundle,
                                    double delta) {
  const BiasSet bias = mechanism_bias(cfg, mech, bundle);
  switch (mech) {
    case Mechanism::kForwardKl:
      return solve_forward_kl(mechanism_set(mech, bundle), bias, delta);
    case Mechanism::kWasserstein:
      return solve_wasserstein(mechanism_set(mech, bundle), bias, delta);
    case Mechanism::kRestrictedWasserstein:
      return restricted_wasserstein(mechanism_set(mech, bundle), delta);
    case Mechanism::kBackwardKl:
      return solve_backward_kl(mechanism_set(mech, bundle), bias, delta);
  }
  throw std::invalid_argument("solve_cell: unknown mechanism");
}

inline std::uint64_t impute_seed(const ExperimentConfig& cfg, int sim,
                                 Mechanism mech, int delta_index) {
  return derive_seed(
      cfg.seed,
      {stream::impute, static_cast<std::uint64_t>(sim),
       static_cast<std::uint64_t>(static_cast<int>(mech)),
       static_cast<std::uint64_t>(delta_index)});
}

/// Mean and unbiased variance of the portfolio regret over the imputed
/// panels. The truth panel supplies the test and out-of-sample returns;
/// those rows carry no missing entries, so the masked panel serves.
inline std::pair<double, double> regret_stats(
    const Panel& masked, const std::vector<Eigen::MatrixXd>& completed) {
  std::vector<double> drs;
  drs.reserve(completed.size());
  for (const auto& panel : completed) {
    const Eigen::VectorXd w = portfolio_weights(panel, masked.split());
    drs.push_back(regret(masked, w));
  }
  return mean_and_variance(drs);
}

/// All cells of one simulation, in (mechanism order, budget index) order.
/// Failures never escape: a broken stage marks the affected cells failed
/// with the reason. When sampled is non-null the solutions are exported
/// (used for the sim-0 artifact sample).
inline std::vector<CellRecord> run_simulation(
    const ExperimentConfig& cfg, int sim, const std::optional<Panel>& shared_truth,
    std::vector<std::pair<std::string, ConsensusSolution>>* sampled) {
  std::vector<CellRecord> records;
  const auto fail_all = [&](const std::string& why) {
    records.clear();
    for (const Mechanism mech : cfg.mechanisms) {
      for (int di = 0; di < cfg.delta_count; ++di) {
        CellRecord r;
        r.sim = sim;
        r.mechanism = mech;
        r.delta_index = di;
        r.error = why;
        records.push_back(std::move(r));
      }
    }
    return records;
  };

  std::optional<Panel> masked;
  std::optional<Eigen::MatrixXd> omega;
  std::optional<PosteriorBundle> bundle;
  try {
    const Panel truth =
        shared_truth.has_value() ? *shared_truth : simulate_truth(cfg, sim);
    masked.emplace(mask_truth(cfg, truth, sim));
    omega.emplace(experiment_omega(cfg, *masked));
    bundle.emplace(build_posteriors(cfg, *masked, *omega));
  } catch (const std::exception& e) {
    return fail_all(e.what());
  }

  for (const Mechanism mech : cfg.mechanisms) {
    std::vector<double> grid;
    std::string grid_error;
    try {
      grid = mechanism_grid(cfg, mech, *bundle);
    } catch (const std::exception& e) {
      grid_error = e.what();
    }
    for (int di = 0; di < cfg.delta_count; ++di) {
      CellRecord r;
      r.sim = sim;
      r.mechanism = mech;
      r.delta_index = di;
      if (!grid_error.empty()) {
        r.error = grid_error;
        records.push_back(std::move(r));
        continue;
      }
      r.delta = grid[static_cast<std::size_t>(di)];
      try {
        ConsensusSolution sol = solve_cell(cfg, mech, *bundle, r.delta);
        if (sol.status == SolverStatus::kFailed)
          throw NumericError("solver reported failure");
        r.fallback = sol.status == SolverStatus::kFallbackAnchor;
        const std::vector<Eigen::MatrixXd> completed =
            impute(*masked, sol.aggregated, *omega, cfg.mode, cfg.imputations,
                   impute_seed(cfg, sim, mech, di));
        const auto stats = regret_stats(*masked, completed);
        r.dr_mean = stats.first;
        r.dr_var = stats.second;
        r.completed = true;
        if (sampled != nullptr)
          sampled->emplace_back(
              mechanism_label(mech) + "_d" + std::to_string(di),
              std::move(sol));
      } catch (const std::exception& e) {
        r.completed = false;
        r.error = e.what();
      }
      records.push_back(std::move(r));
    }
  }
  return records;
}

inline std::uint64_t bootstrap_seed(const ExperimentConfig& cfg, Mechanism mech,
                                    int delta_index) {
  return derive_seed(
      cfg.seed, {stream::bootstrap,
                 static_cast<std::uint64_t>(static_cast<int>(mech)),
                 static_cast<std::uint64_t>(delta_index)});
}

/// Groups the flat cell table into one report per mechanism. Cells are
/// keyed (mechanism, budget index); record order within a key follows
/// the simulation index, so aggregation is independent of how the sweep
/// was scheduled.
inline std::vector<EvalReport> aggregate_reports(
    const ExperimentConfig& cfg, const std::vector<CellRecord>& cells) {
  std::vector<EvalReport> reports;
  for (const Mechanism mech : cfg.mechanisms) {
    EvalReport report;
    report.mechanism = mechanism_label(mech);
    report.simulations = cfg.simulations;
    report.imputations = cfg.imputations;
    report.seed = cfg.seed;
    for (int di = 0; di < cfg.delta_count; ++di) {
      std::vector<std::pair<int, SimulationCell>> keyed;
      for (const auto& c : cells) {
        if (c.mechanism != mech || c.delta_index != di) continue;
        SimulationCell sc;
        sc.dr_mean = c.dr_mean;
        sc.dr_var = c.dr_var;
        sc.delta = c.delta;
        sc.completed = c.completed;
        sc.fallback = c.fallback;
        keyed.emplace_back(c.sim, sc);
      }
      std::sort(keyed.begin(), keyed.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      std::vector<SimulationCell> ordered;
      ordered.reserve(keyed.size());
      for (auto& kv : keyed) ordered.push_back(kv.second);
      if (ordered.empty())
        throw DataError("aggregate_reports: no cells for mechanism '" +
                        report.mechanism + "' at budget index " +
                        std::to_string(di));
      report.cells.push_back(
          summarize_cell(ordered, bootstrap_seed(cfg, mech, di)));
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

struct SweepResult {
  std::vector<CellRecord> cells;
  std::vector<EvalReport> reports;
  std::vector<std::pair<std::string, ConsensusSolution>> sampled;

  [[nodiscard]] int failed_count() const {
    int failed = 0;
    for (const auto& c : cells)
      if (!c.completed) ++failed;
    return failed;
  }
};

/// Runs all simulations, in parallel over the simulation index. Results
/// land in per-simulation slots, so the outcome is identical for any
/// worker count.
inline SweepResult run_sweep(const ExperimentConfig& cfg, int jobs) {
  if (jobs < 1) throw std::invalid_argument("run_sweep: need jobs >= 1");
  std::optional<Panel> shared_truth;
  if (cfg.source == ExperimentConfig::Source::kCsv)
    shared_truth.emplace(load_csv_truth(cfg));

  const int s_total = cfg.simulations;
  std::vector<std::vector<CellRecord>> slots(
      static_cast<std::size_t>(s_total));
  std::vector<std::pair<std::string, ConsensusSolution>> sampled;
  std::atomic<int> next{0};
  const int workers = std::min(jobs, s_total);
  const auto work = [&]() {
    while (true) {
      const int sim = next.fetch_add(1);
      if (sim >= s_total) return;
      try {
        slots[static_cast<std::size_t>(sim)] = run_simulation(
            cfg, sim, shared_truth, sim == 0 ? &sampled : nullptr);
      } catch (const std::exception& e) {
        // run_simulation contains its own failures; this is a safety net.
        std::vector<CellRecord>& rs = slots[static_cast<std::size_t>(sim)];
        rs.clear();
        for (const Mechanism mech : cfg.mechanisms) {
          for (int di = 0; di < cfg.delta_count; ++di) {
            CellRecord r;
            r.sim = sim;
            r.mechanism = mech;
            r.delta_index = di;
            r.error = e.what();
            rs.push_back(std::move(r));
          }
        }
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  SweepResult result;
  for (auto& slot : slots)
    for (auto& r : slot) result.cells.push_back(std::move(r));
  result.reports = aggregate_reports(cfg, result.cells);
  result.sampled = std::move(sampled);
  return result;
}

// ---- on-disk stages ----

namespace artifact {

inline std::string truth_csv(const std::string& dir) { return dir + "/truth.csv"; }
inline std::string masked_csv(const std::string& dir) {
  return dir + "/masked.csv";
}
inline std::string mask_csv(const std::string& dir) { return dir + "/mask.csv"; }
inline std::string omega_json(const std::string& dir) {
  return dir + "/omega.json";
}
inline std::string posteriors_json(const std::string& dir) {
  return dir + "/posteriors.json";
}
inline std::string projected_json(const std::string& dir) {
  return dir + "/posteriors_projected.json";
}
inline std::string solution_json(const std::string& dir,
                                 const std::string& mech, int delta_index) {
  return dir + "/solutions/" + mech + "_d" + std::to_string(delta_index) +
         ".json";
}
inline std::string imputed_csv(const std::string& dir, const std::string& mech,
                               int delta_index, int imputation) {
  return dir + "/imputed/" + mech + "_d" + std::to_string(delta_index) + "_m" +
         std::to_string(imputation) + ".csv";
}
inline std::string cells_json(const std::string& dir) {
  return dir + "/cells.json";
}
inline std::string report_json(const std::string& dir) {
  return dir + "/report.json";
}
inline std::string report_csv(const std::string& dir) {
  return dir + "/report.csv";
}
inline std::string plot_csv(const std::string& dir) { return dir + "/plot.csv"; }
inline std::string series_csv(const std::string& dir,
                              const std::string& mech) {
  return dir + "/series_" + mech + ".csv";
}
inline std::string config_json(const std::string& dir) {
  return dir + "/config.json";
}
inline std::string manifest_json(const std::string& dir) {
  return dir + "/manifest.json";
}

}  // namespace artifact

namespace detail {

inline void require_artifact(const std::string& path, const char* stage) {
  if (!std::filesystem::exists(path))
    throw DataError("missing artifact '" + path + "'; run the " + stage +
                    " stage first");
}

inline void echo_config(const ExperimentConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  write_json_file(artifact::config_json(dir), config_to_json(cfg));
}

}  // namespace detail

/// Rewrites the manifest from the directory contents: every regular file
/// (except the manifest itself), sorted by relative path, with an FNV-1a
/// content hash. No timestamps, so equal runs give equal manifests.
inline void write_manifest(const ExperimentConfig& cfg,
                           const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& entry :
       std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel =
        std::filesystem::relative(entry.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    paths.push_back(rel);
  }
  std::sort(paths.begin(), paths.end());
  Json files = Json::array();
  for (const auto& rel : paths) {
    const std::string content = read_text_file(dir + "/" + rel);
    files.push_back(Json{{"path", rel}, {"hash", hex64(fnv1a64(content))}});
  }
  const Json manifest{
      {"version", kLibraryVersion},
      {"seed", cfg.seed},
      {"config_hash", hex64(fnv1a64(config_to_json(cfg).dump(2)))},
      {"files", std::move(files)}};
  write_json_file(artifact::manifest_json(dir), manifest);
}

inline void stage_simulate(const ExperimentConfig& cfg, const std::string& dir,
                           int sim) {
  detail::echo_config(cfg, dir);
  const Panel truth = simulate_truth(cfg, sim);
  write_csv(truth, artifact::truth_csv(dir));
  write_manifest(cfg, dir);
}

inline void stage_mask(const ExperimentConfig& cfg, const std::string& dir,
                       int sim) {
  detail::echo_config(cfg, dir);
  detail::require_artifact(artifact::truth_csv(dir), "simulate");
  const Panel truth = read_csv(artifact::truth_csv(dir), cfg.split);
  const Panel masked = mask_truth(cfg, truth, sim);
  write_csv(masked, artifact::masked_csv(dir));
  write_mask_csv(masked, artifact::mask_csv(dir));
  write_manifest(cfg, dir);
}

inline void stage_posteriors(const ExperimentConfig& cfg,
                             const std::string& dir) {
  detail::echo_config(cfg, dir);
  detail::require_artifact(artifact::masked_csv(dir), "mask");
  const Panel masked = read_csv(artifact::masked_csv(dir), cfg.split);
  const Eigen::MatrixXd omega = experiment_omega(cfg, masked);
  const PosteriorBundle bundle = build_posteriors(cfg, masked, omega);
  write_json_file(artifact::omega_json(dir), Json{{"omega", to_json(omega)}});
  write_json_file(artifact::posteriors_json(dir),
                  posterior_set_to_json(bundle.raw));
  if (bundle.projected.has_value())
    write_json_file(artifact::projected_json(dir),
                    posterior_set_to_json(*bundle.projected));
  write_manifest(cfg, dir);
}

namespace detail {

inline PosteriorBundle load_bundle(const ExperimentConfig& cfg,
                                   const std::string& dir) {
  require_artifact(artifact::posteriors_json(dir), "posteriors");
  PosteriorBundle bundle{
      posterior_set_from_json(read_json_file(artifact::posteriors_json(dir))),
      std::nullopt};
  bool needs = false;
  for (const Mechanism m : cfg.mechanisms)
    needs = needs || mechanism_needs_basis(m);
  if (needs) {
    require_artifact(artifact::projected_json(dir), "posteriors");
    bundle.projected =
        posterior_set_from_json(read_json_file(artifact::projected_json(dir)));
  }
  return bundle;
}

}  // namespace detail

/// Solves every configured mechanism over its budget grid (or at one
/// explicit budget) from the stored posteriors.
inline void stage_solve(const ExperimentConfig& cfg, const std::string& dir,
                        std::optional<double> fixed_delta = std::nullopt) {
  detail::echo_config(cfg, dir);
  const PosteriorBundle bundle = detail::load_bundle(cfg, dir);
  std::filesystem::create_directories(dir + "/solutions");
  for (const Mechanism mech : cfg.mechanisms) {
    const std::vector<double> grid =
        fixed_delta.has_value() ? std::vector<double>{*fixed_delta}
                                : mechanism_grid(cfg, mech, bundle);
    for (std::size_t di = 0; di < grid.size(); ++di) {
      const ConsensusSolution sol = solve_cell(cfg, mech, bundle, grid[di]);
      const std::string path =
          fixed_delta.has_value()
              ? dir + "/solutions/" + mechanism_label(mech) + "_custom.json"
              : artifact::solution_json(dir, mechanism_label(mech),
                                        static_cast<int>(di));
      write_json_file(path, consensus_solution_to_json(sol));
    }
  }
  write_manifest(cfg, dir);
}

inline void stage_impute(const ExperimentConfig& cfg, const std::string& dir,
                         int sim) {
  detail::echo_config(cfg, dir);
  detail::require_artifact(artifact::masked_csv(dir), "mask");
  detail::require_artifact(artifact::omega_json(dir), "posteriors");
  const Panel masked = read_csv(artifact::masked_csv(dir), cfg.split);
  const Eigen::MatrixXd omega = matrix_from_json(
      detail::require_key(read_json_file(artifact::omega_json(dir)), "omega",
                          "omega file"),
      "omega");
  std::filesystem::create_directories(dir + "/imputed");
  for (const Mechanism mech : cfg.mechanisms) {
    for (int di = 0; di < cfg.delta_count; ++di) {
      const std::string spath =
          artifact::solution_json(dir, mechanism_label(mech), di);
      detail::require_artifact(spath, "solve");
      const ConsensusSolution sol =
          consensus_solution_from_json(read_json_file(spath));
      const std::vector<Eigen::MatrixXd> completed =
          impute(masked, sol.aggregated, omega, cfg.mode, cfg.imputations,
                 impute_seed(cfg, sim, mech, di));
      for (int m = 0; m < cfg.imputations; ++m) {
        const Panel out(completed[static_cast<std::size_t>(m)],
                        MaskMatrix::Constant(masked.rows(), masked.cols(), false),
                        masked.split(), masked.columns());
        write_csv(out, artifact::imputed_csv(dir, mechanism_label(mech), di, m));
      }
    }
  }
  write_manifest(cfg, dir);
}

/// Rebuilds the cell table for this simulation from the imputed panels,
/// then aggregates it into the report artifacts.
inline void stage_evaluate(const ExperimentConfig& cfg, const std::string& dir,
                           int sim) {
  detail::echo_config(cfg, dir);
  detail::require_artifact(artifact::masked_csv(dir), "mask");
  const Panel masked = read_csv(artifact::masked_csv(dir), cfg.split);
  std::vector<CellRecord> cells;
  for (const Mechanism mech : cfg.mechanisms) {
    for (int di = 0; di < cfg.delta_count; ++di) {
      const std::string spath =
          artifact::solution_json(dir, mechanism_label(mech), di);
      detail::require_artifact(spath, "solve");
      const ConsensusSolution sol =
          consensus_solution_from_json(read_json_file(spath));
      CellRecord r;
      r.sim = sim;
      r.mechanism = mech;
      r.delta_index = di;
      r.delta = sol.delta;
      r.fallback = sol.status == SolverStatus::kFallbackAnchor;
      std::vector<Eigen::MatrixXd> completed;
      for (int m = 0; m < cfg.imputations; ++m) {
        const std::string ipath =
            artifact::imputed_csv(dir, mechanism_label(mech), di, m);
        detail::require_artifact(ipath, "impute");
        completed.push_back(read_csv(ipath, cfg.split).values());
      }
      const auto stats = regret_stats(masked, completed);
      r.dr_mean = stats.first;
      r.dr_var = stats.second;
      r.completed = true;
      cells.push_back(std::move(r));
    }
  }
  write_json_file(artifact::cells_json(dir), cells_to_json(cfg, cells));
  const std::vector<EvalReport> reports = aggregate_reports(cfg, cells);
  Json rj = Json::array();
  for (const auto& r : reports) rj.push_back(eval_report_to_json(r));
  write_json_file(artifact::report_json(dir), rj);
  write_text_file(artifact::report_csv(dir), report_table_csv(reports));
  write_text_file(artifact::plot_csv(dir), plot_data_csv(reports));
  write_manifest(cfg, dir);
}

/// Renders the stored report into plot data: the long-format table plus
/// one file per mechanism.
inline void stage_report(const ExperimentConfig& cfg, const std::string& dir) {
  detail::echo_config(cfg, dir);
  detail::require_artifact(artifact::report_json(dir), "evaluate");
  const Json rj = read_json_file(artifact::report_json(dir));
  if (!rj.is_array()) throw DataError("report file: expected an array");
  std::vector<EvalReport> reports;
  for (const auto& r : rj) reports.push_back(eval_report_from_json(r));
  write_text_file(artifact::plot_csv(dir), plot_data_csv(reports));
  for (const auto& r : reports) {
    std::string out =
        "delta,ecmse,se_ecmse,ecbias2,se_ecbias2,ecvar,se_ecvar\n";
    for (const auto& c : r.cells) {
      bool first = true;
      for (const double v : {c.delta, c.ecmse, c.se_ecmse, c.ecbias2,
                             c.se_ecbias2, c.ecvar, c.se_ecvar}) {
        if (!first) out += ',';
        out += detail::format_double(v);
        first = false;
      }
      out += '\n';
    }
    write_text_file(artifact::series_csv(dir, r.mechanism), out);
  }
  write_manifest(cfg, dir);
}

/// Monolithic pipeline: all simulations in memory, then the aggregate
/// artifacts plus a sample of simulation-0 solutions.
inline SweepResult run_sweep_to_dir(const ExperimentConfig& cfg,
                                    const std::string& dir, int jobs) {
  detail::echo_config(cfg, dir);
  SweepResult result = run_sweep(cfg, jobs);
  std::filesystem::create_directories(dir + "/solutions");
  for (const auto& [name, sol] : result.sampled)
    write_json_file(dir + "/solutions/" + name + ".json",
                    consensus_solution_to_json(sol));
  write_json_file(artifact::cells_json(dir), cells_to_json(cfg, result.cells));
  Json rj = Json::array();
  for (const auto& r : result.reports) rj.push_back(eval_report_to_json(r));
  write_json_file(artifact::report_json(dir), rj);
  write_text_file(artifact::report_csv(dir), report_table_csv(result.reports));
  write_text_file(artifact::plot_csv(dir), plot_data_csv(result.reports));
  write_manifest(cfg, dir);
  return result;
}

}  // namespace baryimp
