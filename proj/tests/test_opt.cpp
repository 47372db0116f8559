#include <cmath>
#include <random>

#include <catch_amalgamated.hpp>

#include <baryimp/simplex_opt.hpp>

#include "support/helpers.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("project_to_simplex known cases") {
  VectorXd a(2);
  a << 2.0, 0.0;
  const VectorXd pa = baryimp::opt::project_to_simplex(a);
  CHECK(pa(0) == Catch::Approx(1.0).margin(1e-12));
  CHECK(pa(1) == Catch::Approx(0.0).margin(1e-12));

  VectorXd b(2);
  b << 0.3, 0.3;
  const VectorXd pb = baryimp::opt::project_to_simplex(b);
  CHECK(pb(0) == Catch::Approx(0.5).margin(1e-12));
  CHECK(pb(1) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("project_to_simplex is the closest simplex point") {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd y = testsupport::random_vector(gen, 3, 2.0);
    const VectorXd p = baryimp::opt::project_to_simplex(y);
    REQUIRE(p.minCoeff() >= -1e-12);
    REQUIRE(p.sum() == Catch::Approx(1.0).margin(1e-9));
    const double dist = (p - y).squaredNorm();
    testsupport::for_each_simplex_point(3, 50, [&](const VectorXd& q) {
      CHECK((q - y).squaredNorm() >= dist - 1e-9);
    });
  }
}

TEST_CASE("projected gradient solves a separable simplex quadratic") {
  // min |x - y|^2 over the simplex: the solution is the projection.
  std::mt19937_64 gen(2);
  const VectorXd y = testsupport::random_vector(gen, 4, 1.5);
  baryimp::opt::Objective f;
  f.value = [&](const VectorXd& x) { return (x - y).squaredNorm(); };
  f.grad = [&](const VectorXd& x) { return VectorXd(2.0 * (x - y)); };
  const auto res = baryimp::opt::projected_gradient_simplex(
      f, VectorXd::Constant(4, 0.25));
  REQUIRE(res.converged);
  CHECK((res.x - baryimp::opt::project_to_simplex(y)).cwiseAbs().maxCoeff() <
        1e-8);
}

TEST_CASE("projected gradient handles an ill-conditioned quadratic") {
  MatrixXd q(3, 3);
  q << 100.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.01;
  baryimp::opt::Objective f;
  f.value = [&](const VectorXd& x) { return 0.5 * x.dot(q * x); };
  f.grad = [&](const VectorXd& x) { return VectorXd(q * x); };
  const auto res = baryimp::opt::projected_gradient_simplex(
      f, VectorXd::Constant(3, 1.0 / 3.0));
  REQUIRE(res.converged);
  // Stationarity on the simplex: q_i x_i constant, so x_i is
  // proportional to 1 / q_i.
  const double denom = 1.0 / 100.0 + 1.0 + 1.0 / 0.01;
  CHECK(res.x(0) == Catch::Approx((1.0 / 100.0) / denom).margin(1e-6));
  CHECK(res.x(1) == Catch::Approx(1.0 / denom).margin(1e-6));
  CHECK(res.x(2) == Catch::Approx((1.0 / 0.01) / denom).margin(1e-6));
}

TEST_CASE("interior point solves a constrained simplex quadratic") {
  // min |x - y|^2 over the simplex with the cap x_0 <= 0.2.
  VectorXd y(3);
  y << 1.0, 0.0, 0.0;
  baryimp::opt::Objective f;
  f.value = [&](const VectorXd& x) { return (x - y).squaredNorm(); };
  f.grad = [&](const VectorXd& x) { return VectorXd(2.0 * (x - y)); };
  f.hess = [&](const VectorXd& x) {
    return MatrixXd(2.0 * MatrixXd::Identity(3, 3));
  };
  MatrixXd g(1, 3);
  g << 1.0, 0.0, 0.0;
  VectorXd h(1);
  h << 0.2;
  VectorXd start(3);
  start << 0.1, 0.45, 0.45;  // strictly inside the cap
  const auto res = baryimp::opt::interior_point_polytope(f, g, h, start);
  REQUIRE(res.converged);
  CHECK(res.x(0) == Catch::Approx(0.2).margin(1e-6));
  CHECK(res.x(1) == Catch::Approx(0.4).margin(1e-6));
  CHECK(res.x(2) == Catch::Approx(0.4).margin(1e-6));
}

TEST_CASE("interior point requires a strictly feasible start") {
  baryimp::opt::Objective f;
  f.value = [](const VectorXd& x) { return x.squaredNorm(); };
  f.grad = [](const VectorXd& x) { return VectorXd(2.0 * x); };
  f.hess = [](const VectorXd& x) {
    return MatrixXd(2.0 * MatrixXd::Identity(2, 2));
  };
  MatrixXd g(1, 2);
  g << 1.0, 0.0;
  VectorXd h(1);
  h << 0.2;
  CHECK_THROWS(baryimp::opt::interior_point_polytope(
      f, g, h, VectorXd::Constant(2, 0.5)));
}

TEST_CASE("augmented lagrangian respects an equality constraint") {
  // min |x|^2 on the simplex subject to x_0 = x_1; solution loads the
  // free coordinate trade-off symmetrically.
  baryimp::opt::Objective f;
  f.value = [](const VectorXd& x) { return x.squaredNorm(); };
  f.grad = [](const VectorXd& x) { return VectorXd(2.0 * x); };
  std::vector<baryimp::opt::EqConstraint> eqs(1);
  eqs[0].value = [](const VectorXd& x) { return x(0) - x(1); };
  eqs[0].grad = [](const VectorXd& x) {
    VectorXd g = VectorXd::Zero(x.size());
    g(0) = 1.0;
    g(1) = -1.0;
    return g;
  };
  const auto res = baryimp::opt::augmented_lagrangian_simplex(
      f, {}, eqs, VectorXd::Constant(3, 1.0 / 3.0));
  REQUIRE(res.converged);
  CHECK(std::abs(res.x(0) - res.x(1)) < 1e-7);
  // Unconstrained simplex minimum of |x|^2 is uniform, which already
  // satisfies the tie, so the solver should find it.
  CHECK(res.x(2) == Catch::Approx(1.0 / 3.0).margin(1e-5));
}

TEST_CASE("augmented lagrangian enforces an inequality") {
  // min |x - e_0|^2 with x_0 <= 0.3 on the simplex.
  VectorXd y(3);
  y << 1.0, 0.0, 0.0;
  baryimp::opt::Objective f;
  f.value = [&](const VectorXd& x) { return (x - y).squaredNorm(); };
  f.grad = [&](const VectorXd& x) { return VectorXd(2.0 * (x - y)); };
  std::vector<baryimp::opt::IneqConstraint> ineqs(1);
  ineqs[0].value = [](const VectorXd& x) { return x(0) - 0.3; };
  ineqs[0].grad = [](const VectorXd& x) {
    VectorXd g = VectorXd::Zero(x.size());
    g(0) = 1.0;
    return g;
  };
  const auto res = baryimp::opt::augmented_lagrangian_simplex(
      f, ineqs, {}, VectorXd::Constant(3, 1.0 / 3.0));
  REQUIRE(res.converged);
  CHECK(res.x(0) == Catch::Approx(0.3).margin(1e-5));
  CHECK(res.x(1) == Catch::Approx(0.35).margin(1e-4));
}
