#include "doctest.h"

#include "fixtures.hpp"
#include "gmed/simulate.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

using namespace gmed;
using gmed::testing::code_of;

TEST_CASE("random orthonormal matrices") {
  Rng rng = make_stream(61, 0);
  const MatrixXd one = random_orthonormal(1, rng);
  CHECK(one.rows() == 1);
  CHECK(one(0, 0) == 1.0);
  const MatrixXd P = random_orthonormal(50, rng);
  CHECK((P.transpose() * P - MatrixXd::Identity(50, 50)).cwiseAbs().maxCoeff() <= 1e-10);
  Rng a = make_stream(62, 3), b = make_stream(62, 3);
  CHECK(random_orthonormal(6, a) == random_orthonormal(6, b));
}

TEST_CASE("similarity") {
  const VectorXd e1 = VectorXd::Unit(3, 0);
  CHECK(similarity(e1, e1) == 1.0);
  CHECK(similarity(-e1, e1) == 1.0);
  CHECK(similarity(VectorXd::Unit(3, 1), e1) == 0.0);
  // The estimate is renormalized to unit length first.
  CHECK(similarity(5.0 * e1 + 5.0 * VectorXd::Unit(3, 1), e1) == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("design validation") {
  CHECK_NOTHROW(SimulationDesign::case1(10, 500, 100).validate());
  CHECK(SimulationDesign::case2(10, 500, 100).q == 2);
  auto d = SimulationDesign::case1(3, 10, 10);
  CHECK(code_of([&] { d.validate(); }) == ErrorCode::InvalidArgument);
  d = SimulationDesign::case1(10, 10, 0);
  CHECK(code_of([&] { d.validate(); }) == ErrorCode::InvalidArgument);
  d = SimulationDesign::case1(10, 10, 10);
  d.mediation_dims = {0};
  CHECK(code_of([&] { d.validate(); }) == ErrorCode::InvalidArgument);
  d = SimulationDesign::case1(10, 10, 10);
  d.scale = EigenScale::Raw;
  CHECK(code_of([&] { d.validate(); }) == ErrorCode::InvalidArgument);

  d = SimulationDesign::case1(5, 10, 10);
  CHECK(eigen_mean(d, 0, 3) == 3.0);
  CHECK(eigen_mean(d, 1, 3) == 1.0);
  CHECK(eigen_mean(d, 2, 3) == -1.0);
}

TEST_CASE("generated datasets") {
  auto design = SimulationDesign::case1(6, 30, 20);
  design.seed = 9;
  const auto a = generate_dataset(design);
  const auto b = generate_dataset(design);
  REQUIRE(a.units.size() == 30);
  for (std::size_t i = 0; i < a.units.size(); ++i) {
    CHECK(a.units[i].mediator == b.units[i].mediator);
    CHECK(a.units[i].outcome == b.units[i].outcome);
    CHECK(a.units[i].mediator.rows() == 20);
    CHECK(a.units[i].confounders.size() == 0);
  }
  CHECK(a.truth.aie == 1.0);
  CHECK(a.truth.ade == 1.0);
  CHECK((a.truth.Pi.transpose() * a.truth.Pi - MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() <= 1e-10);

  auto design2 = SimulationDesign::case2(6, 200, 5);
  const auto c = generate_dataset(design2);
  CHECK(c.units[0].confounders.size() == 2);
  double sum_w2 = 0.0;
  for (const auto& u : c.units) {
    CHECK((u.confounders(1) == 0.0 || u.confounders(1) == 1.0));
    CHECK((u.exposure == 0.0 || u.exposure == 1.0));
    sum_w2 += u.confounders(1);
  }
  CHECK(sum_w2 > 60);
  CHECK(sum_w2 < 140);
  CHECK(c.truth.phi2.size() == 2);
  CHECK(c.truth.phi2(0) == 0.5);
}

TEST_CASE("no mediation and no spread gives identical covariances") {
  auto design = SimulationDesign::case1(4, 5, 100000);
  design.mediation_dims.clear();
  design.eig_sd = 0.0;
  design.log_eig_mean_hi = 1.0;
  design.seed = 12;
  const auto sim = generate_dataset(design);
  const auto cov = sample_covariances(sim.units);
  for (std::size_t i = 1; i < cov.size(); ++i) CHECK((cov[i].S - cov[0].S).cwiseAbs().maxCoeff() <= 0.05);
}

TEST_CASE("sample covariances converge to the planted covariance") {
  auto design = SimulationDesign::case1(4, 4, 100000);
  // Deterministic eigenvalues so the planted covariance is known exactly.
  design.eig_sd = 0.0;
  design.error_sd = 0.0;
  design.coef_magnitude = 0.5;
  design.log_eig_mean_hi = 1.0;
  design.seed = 13;
  const auto sim = generate_dataset(design);
  const auto cov = sample_covariances(sim.units);
  const int n_other = 2;
  for (std::size_t i = 0; i < sim.units.size(); ++i) {
    VectorXd log_lambda(4);
    int other = 0;
    for (int j = 1; j <= 4; ++j) {
      const bool mediating = j == 2 || j == 4;
      log_lambda(j - 1) = mediating ? 0.5 + 0.5 * sim.units[i].exposure : eigen_mean(design, other++, n_other);
    }
    const MatrixXd Sigma = sim.truth.Pi * log_lambda.array().exp().matrix().asDiagonal() * sim.truth.Pi.transpose();
    CHECK((cov[i].S - Sigma).cwiseAbs().maxCoeff() <= 0.05);
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(cov[i].S).eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("truth beats random perturbations") {
  auto design = SimulationDesign::case1(6, 200, 200);
  design.mediation_dims = {2};
  design.seed = 14;
  const auto sim = generate_dataset(design);
  const auto data = MediationData::from_units(sim.units);
  const auto& t = sim.truth;

  ModelParameters truth;
  truth.theta = ProjectionVector::from_normalized(t.Pi.col(1));
  const VectorXd quad = projected_variances(truth.theta.vec(), data);
  truth.alpha_block = VectorXd::Constant(1, t.alpha);
  truth.alpha0 = t.alpha0;
  truth.alpha0i = quad.array().log().matrix() - t.alpha * data.design.col(0);
  truth.pi2 = design.error_sd * design.error_sd;
  truth.gamma0 = t.gamma0;
  truth.gamma_block = VectorXd::Constant(1, t.gamma);
  truth.beta = t.beta;
  truth.sigma2 = design.error_sd * design.error_sd;
  const double best = neg_hier_loglik(truth, data);

  Rng rng = make_stream(15, 0);
  std::normal_distribution<double> z(0.0, 0.5);
  int wins = 0;
  for (int k = 0; k < 100; ++k) {
    auto p = truth;
    p.theta = ProjectionVector::from_normalized((t.Pi.col(1) + testing::gaussian_vector(6, rng, 0.5)).normalized());
    p.alpha0i.array() += z(rng);
    p.alpha0 += z(rng);
    p.alpha_block(0) += z(rng);
    p.pi2 *= std::exp(z(rng));
    p.gamma0 += z(rng);
    p.gamma_block(0) += z(rng);
    p.beta += z(rng);
    p.sigma2 *= std::exp(z(rng));
    if (best < neg_hier_loglik(p, data)) ++wins;
  }
  CHECK(wins >= 95);
}

TEST_CASE("greedy matching") {
  MatrixXd thetas(3, 2);
  thetas << 0.9, 0.1, 0.1, 0.0, 0.4, 1.0;
  const MatrixXd Pi = MatrixXd::Identity(3, 3);
  // Dim 3 takes component 2 first (similarity 0.995), then dim 1 takes component 1.
  const auto m = match_components(thetas, Pi, {1, 3, 2});
  CHECK(m == std::vector<int>{0, 1, -1});
}

TEST_CASE("replication study is thread independent") {
  auto design = SimulationDesign::case1(5, 60, 30);
  design.seed = 21;
  MethodConfig method;
  method.optimizer.n_random_starts = 1;
  method.max_k = 3;
  const auto a = replication_study(design, 4, method);
  method.threads = 3;
  const auto b = replication_study(design, 4, method);
  REQUIRE(a.records.size() == 4);
  CHECK(a.n_failed == 0);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(a.records[r].similarity == b.records[r].similarity);
    CHECK(a.records[r].aie == b.records[r].aie);
  }
  REQUIRE(a.metrics.size() == 2);
  CHECK(a.metrics[0].dim == 2);
  CHECK(a.metrics[1].dim == 4);
  CHECK(metrics_csv(a) == metrics_csv(b));
  CHECK(metrics_csv(a).rfind("sim,p,n,T,dim,mean_similarity", 0) == 0);
  CHECK(a.worst_relative_ascent <= 1e-12);
}
