#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <catch_amalgamated.hpp>

#include <baryimp/serialize.hpp>

#include "support/helpers.hpp"

using baryimp::ConsensusSolution;
using baryimp::Gaussian;
using baryimp::GaussianMixture;
using baryimp::Json;
using baryimp::PosteriorSet;
using baryimp::SolverStatus;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("content hash matches the published fnv1a test vectors") {
  CHECK(baryimp::fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(baryimp::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(baryimp::hex64(0x0) == "0000000000000000");
  CHECK(baryimp::hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
}

TEST_CASE("json files round-trip doubles exactly") {
  testsupport::TempDir dir("serialize");
  const std::string path = dir.str() + "/doubles.json";
  const std::vector<double> values = {0.1, 1.0 / 3.0, 1e-300,
                                      123456789.123456789,
                                      -2.2250738585072014e-308, 5e-324};
  Json j = Json::array();
  for (const double v : values) j.push_back(v);
  baryimp::write_json_file(path, j);
  const Json back = baryimp::read_json_file(path);
  REQUIRE(back.size() == values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    CHECK(back[i].get<double>() == values[i]);
}

TEST_CASE("null stands in for NaN") {
  CHECK(std::isnan(baryimp::detail::json_double(Json(nullptr), "x")));
  CHECK(baryimp::detail::json_double(Json(2.5), "x") == 2.5);
  CHECK_THROWS_AS(baryimp::detail::json_double(Json("nope"), "x"),
                  baryimp::DataError);
}

TEST_CASE("vectors and matrices survive the json round trip") {
  std::mt19937_64 gen(21);
  const VectorXd v = testsupport::random_vector(gen, 5, 3.0);
  const MatrixXd m = testsupport::random_spd(gen, 4);
  CHECK(baryimp::vector_from_json(baryimp::to_json(v), "v") == v);
  CHECK(baryimp::matrix_from_json(baryimp::to_json(m), "m") == m);
  CHECK_THROWS_AS(baryimp::vector_from_json(Json{{"k", 1}}, "v"),
                  baryimp::DataError);
  CHECK_THROWS_AS(baryimp::matrix_from_json(Json::array(), "m"),
                  baryimp::DataError);
  Json ragged = Json::array();
  ragged.push_back(Json::array({1.0, 2.0}));
  ragged.push_back(Json::array({3.0}));
  CHECK_THROWS_AS(baryimp::matrix_from_json(ragged, "m"), baryimp::DataError);
}

TEST_CASE("gaussians round-trip bit for bit") {
  std::mt19937_64 gen(22);
  const Gaussian g(testsupport::random_vector(gen, 3, 2.0),
                   testsupport::random_spd(gen, 3));
  const Gaussian back = baryimp::gaussian_from_json(baryimp::gaussian_to_json(g));
  CHECK(back.mean() == g.mean());
  CHECK(back.cov() == g.cov());
  CHECK_THROWS_AS(baryimp::gaussian_from_json(Json{{"mean", Json::array()}}),
                  baryimp::DataError);
}

TEST_CASE("posterior sets round-trip with and without a basis") {
  std::mt19937_64 gen(23);
  const PosteriorSet raw = testsupport::random_posterior_set(gen, 3, 2);
  const PosteriorSet raw_back =
      baryimp::posterior_set_from_json(baryimp::posterior_set_to_json(raw));
  REQUIRE(raw_back.posteriors.size() == raw.posteriors.size());
  CHECK_FALSE(raw_back.basis.has_value());
  CHECK(raw_back.schedule.times == raw.schedule.times);
  for (std::size_t i = 0; i < raw.posteriors.size(); ++i) {
    CHECK(raw_back.posteriors[i].mean() == raw.posteriors[i].mean());
    CHECK(raw_back.posteriors[i].cov() == raw.posteriors[i].cov());
  }

  const PosteriorSet proj =
      baryimp::project_to_basis(raw, baryimp::ProjectionMode::kForwardKl);
  const PosteriorSet proj_back =
      baryimp::posterior_set_from_json(baryimp::posterior_set_to_json(proj));
  REQUIRE(proj_back.basis.has_value());
  CHECK(proj_back.basis->V == proj.basis->V);
  REQUIRE(proj_back.basis->diagonals.size() == proj.basis->diagonals.size());
  for (std::size_t i = 0; i < proj.basis->diagonals.size(); ++i)
    CHECK(proj_back.basis->diagonals[i] == proj.basis->diagonals[i]);
}

TEST_CASE("posterior set parsing rejects malformed input") {
  CHECK_THROWS_AS(baryimp::posterior_set_from_json(Json{{"times", Json::array()}}),
                  baryimp::DataError);
  Json j = baryimp::posterior_set_to_json(
      PosteriorSet({Gaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1)),
                    Gaussian(VectorXd::Zero(1), MatrixXd::Identity(1, 1))},
                   baryimp::TruncationSchedule({5, 9})));
  j["times"][0] = 2.5;
  CHECK_THROWS_AS(baryimp::posterior_set_from_json(j), baryimp::DataError);
}

TEST_CASE("labels map to enums and back") {
  using baryimp::Mechanism;
  for (const Mechanism m :
       {Mechanism::kForwardKl, Mechanism::kWasserstein,
        Mechanism::kRestrictedWasserstein, Mechanism::kBackwardKl})
    CHECK(baryimp::mechanism_from_label(baryimp::mechanism_label(m)) == m);
  CHECK_THROWS_AS(baryimp::mechanism_from_label("reverse_kl"),
                  baryimp::ConfigError);

  for (const SolverStatus s :
       {SolverStatus::kOptimal, SolverStatus::kLocal,
        SolverStatus::kFallbackAnchor, SolverStatus::kFailed})
    CHECK(baryimp::status_from_label(baryimp::status_label(s)) == s);
  CHECK_THROWS_AS(baryimp::status_from_label("great"), baryimp::DataError);

  using baryimp::ImputeMode;
  CHECK(baryimp::impute_mode_from_label("cond_expect") ==
        ImputeMode::kCondExpect);
  CHECK(baryimp::impute_mode_from_label("full_bayes") == ImputeMode::kFullBayes);
  CHECK_THROWS_AS(baryimp::impute_mode_from_label("map"), baryimp::ConfigError);
}

TEST_CASE("consensus solutions round-trip for both aggregate types") {
  std::mt19937_64 gen(24);
  VectorXd lambda(3);
  lambda << 0.2, 0.3, 0.5;
  const Gaussian g(testsupport::random_vector(gen, 2, 1.0),
                   testsupport::random_spd(gen, 2));
  ConsensusSolution sol{lambda, g, 0.75, 1.25, 0.5,
                        SolverStatus::kOptimal};
  const ConsensusSolution back =
      baryimp::consensus_solution_from_json(baryimp::consensus_solution_to_json(sol));
  CHECK(back.lambda == sol.lambda);
  CHECK(back.delta == sol.delta);
  CHECK(back.objective == sol.objective);
  CHECK(back.bias_attained == sol.bias_attained);
  CHECK(back.status == SolverStatus::kOptimal);
  CHECK(std::get<Gaussian>(back.aggregated).mean() == g.mean());

  const GaussianMixture mix(
      {g, Gaussian(testsupport::random_vector(gen, 2, 1.0),
                   testsupport::random_spd(gen, 2))},
      (VectorXd(2) << 0.4, 0.6).finished());
  ConsensusSolution msol{lambda, mix, 0.1, 2.0, 0.05, SolverStatus::kLocal};
  const ConsensusSolution mback = baryimp::consensus_solution_from_json(
      baryimp::consensus_solution_to_json(msol));
  const auto& mix_back = std::get<GaussianMixture>(mback.aggregated);
  CHECK(mix_back.weights() == mix.weights());
  CHECK(mix_back.components()[1].cov() == mix.components()[1].cov());
  CHECK(mback.status == SolverStatus::kLocal);

  Json bad = baryimp::consensus_solution_to_json(sol);
  bad["aggregated"]["type"] = "pointmass";
  CHECK_THROWS_AS(baryimp::consensus_solution_from_json(bad),
                  baryimp::DataError);
}

TEST_CASE("cell summaries encode NaN rows as null") {
  baryimp::CellSummary c;
  c.delta = std::numeric_limits<double>::quiet_NaN();
  c.ecmse = std::numeric_limits<double>::quiet_NaN();
  c.ecbias2 = 0.5;
  c.requested = 3;
  c.failed = 3;
  const Json j = baryimp::cell_summary_to_json(c);
  CHECK(j["delta"].is_null());
  CHECK(j["ecmse"].is_null());
  CHECK(j["ecbias2"] == 0.5);
  const baryimp::CellSummary back = baryimp::cell_summary_from_json(j);
  CHECK(std::isnan(back.ecmse));
  CHECK(back.ecbias2 == 0.5);
  CHECK(back.requested == 3);
  CHECK(back.failed == 3);
}

TEST_CASE("evaluation reports round-trip and export tidy tables") {
  baryimp::EvalReport r;
  r.mechanism = "wasserstein";
  r.simulations = 2;
  r.imputations = 5;
  r.seed = 99;
  baryimp::CellSummary a;
  a.delta = 0.0;
  a.ecmse = 0.4;
  a.ecbias2 = 0.1;
  a.ecvar = 0.3;
  a.requested = a.completed = 2;
  baryimp::CellSummary b = a;
  b.delta = 1.0;
  b.ecmse = 0.2;
  r.cells = {a, b};

  const Json j = baryimp::eval_report_to_json(r);
  CHECK(j["argmin_index"] == 1);
  const baryimp::EvalReport back = baryimp::eval_report_from_json(j);
  CHECK(back.mechanism == r.mechanism);
  CHECK(back.seed == r.seed);
  REQUIRE(back.cells.size() == 2);
  CHECK(back.cells[1].ecmse == 0.2);

  const std::string table = baryimp::report_table_csv({r});
  const std::string header =
      "mechanism,delta,ecmse,ecbias2,ecvar,se_ecmse,se_ecbias2,se_ecvar,"
      "ecmse_ci_lo,ecmse_ci_hi,requested,completed,fallback,failed";
  REQUIRE(table.compare(0, header.size(), header) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 3);
  CHECK(table.find("wasserstein,0,0.4,0.1,0.3,") != std::string::npos);

  const std::string plot = baryimp::plot_data_csv({r});
  const std::string plot_header = "mechanism,series,delta,value,se";
  REQUIRE(plot.compare(0, plot_header.size(), plot_header) == 0);
  // One header plus three series rows per cell.
  CHECK(std::count(plot.begin(), plot.end(), '\n') == 1 + 3 * 2);
  CHECK(plot.find("wasserstein,ecbias2,1,") != std::string::npos);
}

TEST_CASE("file helpers surface IO and parse failures") {
  testsupport::TempDir dir("serialize_io");
  CHECK_THROWS_AS(baryimp::read_text_file(dir.str() + "/absent.txt"),
                  baryimp::DataError);
  const std::string path = dir.str() + "/broken.json";
  baryimp::write_text_file(path, "{not json");
  CHECK_THROWS_AS(baryimp::read_json_file(path), baryimp::DataError);
  baryimp::write_text_file(path, "{\"k\": 3}\n");
  CHECK(baryimp::read_json_file(path)["k"] == 3);
}
