#include <cmath>
#include <random>
#include <vector>

#include <catch_amalgamated.hpp>

#include <baryimp/imputation.hpp>
#include <baryimp/panel.hpp>

#include "support/helpers.hpp"

using baryimp::conditional_map;
using baryimp::Gaussian;
using baryimp::ImputeMode;
using baryimp::Imputer;
using baryimp::MaskMatrix;
using baryimp::Panel;
using baryimp::Rng;
using baryimp::Split;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Small panel with a hand-written mask in the training rows.
Panel hand_panel() {
  const Split split{4, 1, 1};
  MatrixXd values(6, 2);
  values << 1.0, 2.0, 0.0, -1.0, 0.5, 4.0, -0.25, 0.75, 0.1, 0.2, 0.3, 0.4;
  MaskMatrix mask = MaskMatrix::Constant(6, 2, false);
  mask(1, 0) = true;  // row observed only in the second column
  mask(2, 1) = true;  // and the mirror pattern
  return Panel(values, mask, split);
}

MatrixXd hand_omega() {
  MatrixXd omega(2, 2);
  omega << 2.0, 1.0, 1.0, 3.0;
  return omega;
}

}  // namespace

TEST_CASE("conditional map of a fully observed row is empty") {
  const auto cm = conditional_map({false, false, false}, VectorXd::Zero(3),
                                  MatrixXd::Identity(3, 3));
  CHECK(cm.missing.empty());
  CHECK(cm.a.rows() == 0);
  CHECK(cm.b.size() == 0);
}

TEST_CASE("conditional map of a fully missing row is the marginal") {
  std::mt19937_64 gen(11);
  const MatrixXd omega = testsupport::random_spd(gen, 3);
  const auto cm = conditional_map({true, true, true}, VectorXd(0), omega);
  REQUIRE(cm.missing.size() == 3);
  CHECK(cm.a.isApprox(MatrixXd::Identity(3, 3)));
  CHECK(cm.b.isZero());
  CHECK(cm.s.isApprox(omega));
}

TEST_CASE("conditional map matches the bivariate hand computation") {
  // Omega = [[2, 1], [1, 3]], first coordinate missing, x_obs = 4:
  // W = 1/3, mean = theta_0 + (4 - theta_1)/3, Schur = 2 - 1/3.
  VectorXd x_obs(1);
  x_obs << 4.0;
  const auto cm = conditional_map({true, false}, x_obs, hand_omega());
  REQUIRE(cm.missing == std::vector<Eigen::Index>{0});
  CHECK(cm.a(0, 0) == Catch::Approx(1.0).margin(1e-14));
  CHECK(cm.a(0, 1) == Catch::Approx(-1.0 / 3.0).margin(1e-14));
  CHECK(cm.b(0) == Catch::Approx(4.0 / 3.0).margin(1e-14));
  CHECK(cm.s(0, 0) == Catch::Approx(2.0 - 1.0 / 3.0).margin(1e-14));

  VectorXd theta(2);
  theta << 0.5, -2.0;
  const double mean = (cm.a * theta + cm.b)(0);
  CHECK(mean == Catch::Approx(0.5 + (4.0 - (-2.0)) / 3.0).margin(1e-12));
}

TEST_CASE("conditional map validates its inputs") {
  CHECK_THROWS(conditional_map({true}, VectorXd(0), MatrixXd::Zero(2, 3)));
  CHECK_THROWS(conditional_map({true, false, false}, VectorXd::Zero(2),
                               MatrixXd::Identity(2, 2)));
  CHECK_THROWS(conditional_map({true, false}, VectorXd::Zero(0),
                               hand_omega()));
  MatrixXd bad = hand_omega();
  bad(1, 1) = -3.0;  // observed block loses definiteness
  VectorXd x(1);
  x << 1.0;
  CHECK_THROWS_AS(conditional_map({true, false}, x, bad),
                  baryimp::NumericError);
}

TEST_CASE("completion keeps observed cells bit-exact") {
  const Panel panel = hand_panel();
  const Imputer imputer(panel, hand_omega());
  VectorXd theta(2);
  theta << 0.1, -0.4;
  Rng rng(123);
  const MatrixXd done = imputer.complete(theta, ImputeMode::kFullBayes, rng);
  for (Eigen::Index t = 0; t < panel.rows(); ++t)
    for (Eigen::Index i = 0; i < panel.cols(); ++i) {
      if (panel.is_missing(t, i)) {
        CHECK(std::isfinite(done(t, i)));
      } else {
        CHECK(done(t, i) == panel.values()(t, i));
      }
    }
}

TEST_CASE("conditional expectation ignores the rng state") {
  const Panel panel = hand_panel();
  const Imputer imputer(panel, hand_omega());
  VectorXd theta(2);
  theta << 0.7, 0.3;
  Rng a(1);
  Rng b(987654321);
  const MatrixXd first = imputer.complete(theta, ImputeMode::kCondExpect, a);
  const MatrixXd second = imputer.complete(theta, ImputeMode::kCondExpect, b);
  CHECK(first == second);

  // And the fill is the conditional mean given theta, computed directly.
  VectorXd x_obs(1);
  x_obs << panel.values()(1, 1);
  const auto cm = conditional_map({true, false}, x_obs, hand_omega());
  CHECK(first(1, 0) == Catch::Approx((cm.a * theta + cm.b)(0)).margin(1e-12));
}

TEST_CASE("distinct mask patterns are factored once") {
  const Split split{6, 1, 1};
  MatrixXd values = MatrixXd::Zero(8, 3);
  MaskMatrix mask = MaskMatrix::Constant(8, 3, false);
  mask(0, 0) = true;
  mask(1, 0) = true;  // repeats the first pattern
  mask(2, 1) = true;
  mask(3, 0) = true;
  mask(3, 2) = true;
  mask(4, 0) = true;
  mask(4, 2) = true;  // repeats the third pattern
  const Panel panel(values, mask, split);
  const Imputer imputer(panel, MatrixXd::Identity(3, 3) * 2.0);
  CHECK(imputer.pattern_count() == 3);
}

TEST_CASE("imputer rejects mismatched or indefinite omega") {
  const Panel panel = hand_panel();
  CHECK_THROWS(Imputer(panel, MatrixXd::Identity(3, 3)));
  MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(Imputer(panel, indefinite), baryimp::NumericError);
}

TEST_CASE("impute is deterministic in the seed and varies across draws") {
  const Panel panel = hand_panel();
  const Gaussian aggregated(VectorXd::Zero(2), MatrixXd::Identity(2, 2) * 0.3);
  const auto first = baryimp::impute(panel, aggregated, hand_omega(),
                                     ImputeMode::kFullBayes, 4, 99);
  const auto second = baryimp::impute(panel, aggregated, hand_omega(),
                                      ImputeMode::kFullBayes, 4, 99);
  REQUIRE(first.size() == 4);
  for (std::size_t j = 0; j < first.size(); ++j)
    CHECK(first[j] == second[j]);
  CHECK(first[0](1, 0) != first[1](1, 0));

  // Prefixes agree: imputation j only depends on (seed, j).
  const auto shorter = baryimp::impute(panel, aggregated, hand_omega(),
                                       ImputeMode::kFullBayes, 2, 99);
  CHECK(shorter[0] == first[0]);
  CHECK(shorter[1] == first[1]);

  CHECK_THROWS(baryimp::impute(panel, aggregated, hand_omega(),
                               ImputeMode::kFullBayes, 0, 99));
}

TEST_CASE("cell variance splits into mean uncertainty plus residual noise") {
  const Panel panel = hand_panel();
  const MatrixXd omega = hand_omega();
  VectorXd mu(2);
  mu << 0.2, -0.1;
  MatrixXd sigma(2, 2);
  sigma << 0.50, 0.10, 0.10, 0.30;
  const Gaussian aggregated(mu, sigma);

  const int m = 20000;
  const auto draws = baryimp::impute(panel, aggregated, omega,
                                     ImputeMode::kFullBayes, m, 7);
  double sum = 0.0, sumsq = 0.0;
  for (const MatrixXd& d : draws) {
    sum += d(1, 0);
    sumsq += d(1, 0) * d(1, 0);
  }
  const double mean = sum / m;
  const double var = sumsq / m - mean * mean;

  VectorXd x_obs(1);
  x_obs << panel.values()(1, 1);
  const auto cm = conditional_map({true, false}, x_obs, omega);
  const double expect_mean = (cm.a * mu + cm.b)(0);
  const double expect_var = (cm.a * sigma * cm.a.transpose())(0, 0) + cm.s(0, 0);
  CHECK(mean == Catch::Approx(expect_mean).margin(0.05));
  CHECK(var == Catch::Approx(expect_var).epsilon(0.05));

  // Conditional-expectation mode drops the residual term.
  const auto ce = baryimp::impute(panel, aggregated, omega,
                                  ImputeMode::kCondExpect, m, 7);
  sum = sumsq = 0.0;
  for (const MatrixXd& d : ce) {
    sum += d(1, 0);
    sumsq += d(1, 0) * d(1, 0);
  }
  const double ce_var = sumsq / m - (sum / m) * (sum / m);
  CHECK(ce_var ==
        Catch::Approx((cm.a * sigma * cm.a.transpose())(0, 0)).epsilon(0.05));
}
