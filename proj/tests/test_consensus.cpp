#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <catch_amalgamated.hpp>

#include <baryimp/consensus.hpp>

#include "support/helpers.hpp"

using baryimp::BiasSet;
using baryimp::ConsensusSolution;
using baryimp::EuclideanBall;
using baryimp::Gaussian;
using baryimp::Mechanism;
using baryimp::PosteriorSet;
using baryimp::SolverStatus;
using baryimp::TransformedL1Ball;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Instance {
  PosteriorSet projected;
  BiasSet vball;

  explicit Instance(PosteriorSet p)
      : projected(baryimp::project_to_basis(p, baryimp::ProjectionMode::kForwardKl)),
        vball(TransformedL1Ball{projected.basis->V}) {}
};

double aggregated_trace(const ConsensusSolution& sol) {
  if (const auto* g = std::get_if<Gaussian>(&sol.aggregated))
    return g->cov().trace();
  return std::get<baryimp::GaussianMixture>(sol.aggregated)
      .moments()
      .second.trace();
}

ConsensusSolution solve(const Instance& inst, Mechanism mech, double delta) {
  switch (mech) {
    case Mechanism::kForwardKl:
      return baryimp::solve_forward_kl(inst.projected, inst.vball, delta);
    case Mechanism::kWasserstein:
      return baryimp::solve_wasserstein(inst.projected, EuclideanBall{}, delta);
    case Mechanism::kRestrictedWasserstein:
      return baryimp::restricted_wasserstein(inst.projected, delta);
    case Mechanism::kBackwardKl:
      return baryimp::solve_backward_kl(inst.projected, EuclideanBall{}, delta,
                                        8);
  }
  throw std::logic_error("unreachable");
}

const BiasSet& bias_for(const Instance& inst, Mechanism mech) {
  static const BiasSet euclid = EuclideanBall{};
  return mech == Mechanism::kForwardKl ? inst.vball : euclid;
}

}  // namespace

TEST_CASE("delta grid endpoints and spacing") {
  const auto grid = baryimp::delta_grid(3.0, 7);
  REQUIRE(grid.size() == 7);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == 3.0);
  for (std::size_t i = 1; i < grid.size(); ++i)
    CHECK(grid[i] - grid[i - 1] == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS(baryimp::delta_grid(-1.0, 5));
  CHECK_THROWS(baryimp::delta_grid(1.0, 1));

  const auto zeros = baryimp::delta_grid(0.0, 4);
  for (const double d : zeros) CHECK(d == 0.0);
}

TEST_CASE("delta_max is the support value of the endpoint mean gap") {
  std::mt19937_64 gen(51);
  const Instance inst(testsupport::random_posterior_set(gen, 4, 3));
  const VectorXd gap = inst.projected.posteriors.back().mean() -
                       inst.projected.posteriors.front().mean();
  CHECK(baryimp::delta_max(inst.projected, Mechanism::kWasserstein,
                           EuclideanBall{}) ==
        Catch::Approx(gap.norm()).margin(1e-12));
  CHECK(baryimp::delta_max(inst.projected, Mechanism::kForwardKl, inst.vball) ==
        Catch::Approx(
            bias_value(inst.vball, gap))
            .margin(1e-12));

  // A negative ones-direction gap clamps to zero.
  std::vector<Gaussian> posts;
  posts.emplace_back(VectorXd::Constant(2, 1.0), MatrixXd::Identity(2, 2));
  posts.emplace_back(VectorXd::Constant(2, 0.0), MatrixXd::Identity(2, 2));
  const PosteriorSet down(posts, baryimp::TruncationSchedule({10, 20}));
  CHECK(baryimp::delta_max(down, Mechanism::kBackwardKl,
                           baryimp::SingletonOnes{}) == 0.0);
}

TEST_CASE("mechanism/bias pairing is enforced") {
  std::mt19937_64 gen(52);
  const Instance inst(testsupport::random_posterior_set(gen, 3, 2));
  CHECK_THROWS(baryimp::solve_forward_kl(inst.projected, EuclideanBall{}, 0.1));
  CHECK_THROWS(baryimp::solve_wasserstein(inst.projected, inst.vball, 0.1));
  CHECK_THROWS(baryimp::solve_backward_kl(inst.projected, inst.vball, 0.1));
  CHECK_THROWS(baryimp::solve_wasserstein(inst.projected, EuclideanBall{}, -0.5));

  // Raw sets without a shared basis cannot run the projected mechanisms.
  const PosteriorSet raw = testsupport::random_posterior_set(gen, 3, 2);
  CHECK_THROWS(baryimp::solve_wasserstein(raw, EuclideanBall{}, 0.1));
  CHECK_THROWS(baryimp::restricted_wasserstein(raw, 0.1));
}

TEST_CASE("solutions are feasible, on the simplex, and report the trace") {
  std::mt19937_64 gen(100);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 2 + static_cast<int>(gen() % 4);
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(gen() % 3);
    const Instance inst(testsupport::random_posterior_set(gen, k, n));
    for (const Mechanism mech :
         {Mechanism::kForwardKl, Mechanism::kWasserstein,
          Mechanism::kRestrictedWasserstein, Mechanism::kBackwardKl}) {
      const double dmax =
          baryimp::delta_max(inst.projected, mech, bias_for(inst, mech));
      for (const double delta : baryimp::delta_grid(dmax, 4)) {
        const ConsensusSolution sol = solve(inst, mech, delta);
        INFO("mechanism " << baryimp::mechanism_label(mech) << " delta "
                          << delta << " trial " << trial);
        REQUIRE(sol.status != SolverStatus::kFailed);
        CHECK(sol.lambda.size() == k);
        CHECK(sol.lambda.minCoeff() >= -1e-9);
        CHECK(sol.lambda.sum() == Catch::Approx(1.0).margin(1e-8));
        CHECK(sol.bias_attained <= delta + 1e-7);
        CHECK(sol.objective ==
              Catch::Approx(aggregated_trace(sol)).epsilon(1e-6));
        const double reported = bias_value(
            bias_for(inst, mech),
            VectorXd(sol.aggregated_mean() -
                     inst.projected.posteriors.front().mean()));
        CHECK(sol.bias_attained == Catch::Approx(reported).margin(1e-10));
      }
    }
  }
}

TEST_CASE("objective is nonincreasing along the budget grid") {
  std::mt19937_64 gen(200);
  for (int trial = 0; trial < 6; ++trial) {
    const int k = 2 + static_cast<int>(gen() % 3);
    const Instance inst(testsupport::random_posterior_set(gen, k, 3));
    for (const Mechanism mech :
         {Mechanism::kForwardKl, Mechanism::kWasserstein,
          Mechanism::kRestrictedWasserstein, Mechanism::kBackwardKl}) {
      const double dmax =
          baryimp::delta_max(inst.projected, mech, bias_for(inst, mech));
      double prev = std::numeric_limits<double>::infinity();
      for (const double delta : baryimp::delta_grid(dmax, 6)) {
        const ConsensusSolution sol = solve(inst, mech, delta);
        INFO("mechanism " << baryimp::mechanism_label(mech) << " delta "
                          << delta);
        CHECK(sol.objective <= prev + 1e-6);
        prev = std::min(prev, sol.objective);
      }
    }
  }
}

TEST_CASE("zero budget pins the aggregated mean to the first posterior") {
  std::mt19937_64 gen(300);
  for (int trial = 0; trial < 5; ++trial) {
    const Instance inst(testsupport::random_posterior_set(gen, 3, 3));
    const VectorXd mu1 = inst.projected.posteriors.front().mean();
    for (const Mechanism mech :
         {Mechanism::kForwardKl, Mechanism::kWasserstein,
          Mechanism::kRestrictedWasserstein, Mechanism::kBackwardKl}) {
      const ConsensusSolution sol = solve(inst, mech, 0.0);
      INFO("mechanism " << baryimp::mechanism_label(mech));
      CHECK((sol.aggregated_mean() - mu1).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("at the maximal budget the last-posterior vertex is admissible") {
  std::mt19937_64 gen(400);
  for (int trial = 0; trial < 5; ++trial) {
    const int k = 3 + static_cast<int>(gen() % 2);
    const Instance inst(testsupport::random_posterior_set(gen, k, 2));
    for (const Mechanism mech :
         {Mechanism::kForwardKl, Mechanism::kWasserstein,
          Mechanism::kRestrictedWasserstein, Mechanism::kBackwardKl}) {
      const BiasSet& bias = bias_for(inst, mech);
      const double dmax = baryimp::delta_max(inst.projected, mech, bias);
      // The endpoint vertex is feasible without any slack by construction.
      const VectorXd gap = inst.projected.posteriors.back().mean() -
                           inst.projected.posteriors.front().mean();
      REQUIRE(bias_value(bias, gap) <= dmax);

      const ConsensusSolution sol = solve(inst, mech, dmax);
      // e_K is in the candidate pool, so the winner is at least as good.
      VectorXd ek = VectorXd::Zero(k);
      ek(k - 1) = 1.0;
      double ek_objective = 0.0;
      if (mech == Mechanism::kForwardKl) {
        ek_objective =
            baryimp::forward_kl_barycenter(inst.projected, ek).cov().trace();
      } else {
        // Point mass on the last posterior: the trace of its covariance.
        ek_objective = inst.projected.posteriors.back().cov().trace();
      }
      INFO("mechanism " << baryimp::mechanism_label(mech));
      CHECK(sol.objective <= ek_objective + 1e-9);
    }
  }
}

TEST_CASE("solver matches an exhaustive simplex grid at K = 3, n = 2") {
  std::mt19937_64 gen(500);
  for (int trial = 0; trial < 6; ++trial) {
    const Instance inst(testsupport::random_posterior_set(gen, 3, 2));
    const MatrixXd means = baryimp::detail::means_matrix(inst.projected);
    const VectorXd mu1 = means.col(0);

    // Forward KL reduced objective and the Wasserstein quadratic, both
    // evaluated directly from the projected diagonals.
    MatrixXd p(2, 3), roots(2, 3);
    for (int k = 0; k < 3; ++k) {
      p.col(k) =
          inst.projected.basis->diagonals[static_cast<std::size_t>(k)]
              .cwiseInverse();
      roots.col(k) =
          inst.projected.basis->diagonals[static_cast<std::size_t>(k)]
              .cwiseSqrt();
    }
    const MatrixXd u = inst.projected.basis->V.transpose() * means;
    const MatrixXd cmat = u.cwiseProduct(p);
    VectorXd q(3);
    MatrixXd b = means.transpose() * means;
    for (int k = 0; k < 3; ++k)
      q(k) = means.col(k).squaredNorm() +
             inst.projected.posteriors[static_cast<std::size_t>(k)]
                 .cov()
                 .trace();

    for (const Mechanism mech : {Mechanism::kForwardKl,
                                 Mechanism::kWasserstein,
                                 Mechanism::kBackwardKl}) {
      const BiasSet& bias = bias_for(inst, mech);
      const double dmax = baryimp::delta_max(inst.projected, mech, bias);
      const double delta = 0.5 * dmax;

      double grid_best = std::numeric_limits<double>::infinity();
      testsupport::for_each_simplex_point(3, 500, [&](const VectorXd& l) {
        // The budget applies to the aggregated mean. For forward KL that
        // is the precision-weighted blend, not the arithmetic one.
        double bias_at_l = 0.0;
        if (mech == Mechanism::kForwardKl)
          bias_at_l = ((cmat * l).cwiseQuotient(VectorXd(p * l)) - u.col(0))
                          .cwiseAbs()
                          .maxCoeff();
        else
          bias_at_l = bias_value(bias, VectorXd(means * l - mu1));
        if (bias_at_l > delta) return;
        double value = 0.0;
        if (mech == Mechanism::kForwardKl)
          value = (p * l).cwiseInverse().sum();
        else if (mech == Mechanism::kWasserstein)
          value = (roots * l).squaredNorm();
        else
          value = q.dot(l) - l.dot(b * l);
        grid_best = std::min(grid_best, value);
      });

      const ConsensusSolution sol = solve(inst, mech, delta);
      INFO("mechanism " << baryimp::mechanism_label(mech) << " trial "
                        << trial);
      const double scale = std::max(1.0, std::abs(grid_best));
      CHECK(sol.objective <= grid_best + 1e-3 * scale);
      // The grid points are feasible for the true problem, so the solver
      // cannot be much worse than the grid either.
      CHECK(grid_best <= sol.objective + 1e-2 * scale);
    }
  }
}

TEST_CASE("restricted mechanism only weights the two endpoint posteriors") {
  std::mt19937_64 gen(600);
  const Instance inst(testsupport::random_posterior_set(gen, 5, 3));
  const double dmax = baryimp::delta_max(
      inst.projected, Mechanism::kRestrictedWasserstein, EuclideanBall{});
  const ConsensusSolution sol =
      baryimp::restricted_wasserstein(inst.projected, 0.5 * dmax);
  REQUIRE(sol.lambda.size() == 5);
  CHECK(sol.lambda(1) == 0.0);
  CHECK(sol.lambda(2) == 0.0);
  CHECK(sol.lambda(3) == 0.0);
  CHECK(sol.lambda.sum() == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("restricted never beats the full wasserstein mechanism") {
  std::mt19937_64 gen(700);
  for (int trial = 0; trial < 5; ++trial) {
    const Instance inst(testsupport::random_posterior_set(gen, 4, 2));
    const double dmax = baryimp::delta_max(inst.projected,
                                           Mechanism::kWasserstein,
                                           EuclideanBall{});
    for (const double delta : baryimp::delta_grid(dmax, 4)) {
      const ConsensusSolution full =
          baryimp::solve_wasserstein(inst.projected, EuclideanBall{}, delta);
      const ConsensusSolution restr =
          baryimp::restricted_wasserstein(inst.projected, delta);
      // The restricted feasible set is contained in the full one.
      CHECK(full.objective <= restr.objective + 1e-6);
    }
  }
}

TEST_CASE("polyhedral bias sets are enforced through cuts") {
  std::mt19937_64 gen(800);
  const Instance inst(testsupport::random_posterior_set(gen, 3, 2));
  baryimp::Polyhedron box;
  box.A.resize(4, 2);
  box.A << 1, 0, -1, 0, 0, 1, 0, -1;
  box.b = VectorXd::Ones(4);
  const BiasSet bias{box};
  const double dmax =
      baryimp::delta_max(inst.projected, Mechanism::kWasserstein, bias);
  for (const double delta : baryimp::delta_grid(dmax, 5)) {
    const ConsensusSolution sol =
        baryimp::solve_wasserstein(inst.projected, bias, delta);
    CHECK(sol.bias_attained <= delta + 1e-7);
    const ConsensusSolution mix =
        baryimp::solve_backward_kl(inst.projected, bias, delta, 8);
    CHECK(mix.bias_attained <= delta + 1e-7);
  }
}

TEST_CASE("solvers are deterministic") {
  std::mt19937_64 gen(900);
  const Instance inst(testsupport::random_posterior_set(gen, 4, 3));
  const double delta =
      0.3 * baryimp::delta_max(inst.projected, Mechanism::kWasserstein,
                               EuclideanBall{});
  for (const Mechanism mech :
       {Mechanism::kForwardKl, Mechanism::kWasserstein,
        Mechanism::kRestrictedWasserstein, Mechanism::kBackwardKl}) {
    const ConsensusSolution a = solve(inst, mech, delta);
    const ConsensusSolution b = solve(inst, mech, delta);
    CHECK((a.lambda - b.lambda).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.objective == b.objective);
    CHECK(a.bias_attained == b.bias_attained);
  }
}
