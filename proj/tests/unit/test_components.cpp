#include "doctest.h"

#include "fixtures.hpp"
#include "gmed/components.hpp"
#include "gmed/simulate.hpp"

#include <cmath>
#include <limits>

using namespace gmed;
using gmed::testing::code_of;

namespace {

// Units whose sample covariances are exactly Pi diag(lambda_i) Pi'.
std::vector<UnitRecord> common_basis_units(const MatrixXd& Pi, int n, Rng& rng) {
  const Index p = Pi.rows();
  std::normal_distribution<double> z(0.0, 0.3);
  std::vector<UnitRecord> units;
  for (int i = 0; i < n; ++i) {
    UnitRecord u;
    u.unit_id = std::to_string(i);
    u.exposure = i % 2;
    u.confounders = VectorXd(0);
    VectorXd log_lambda(p);
    for (Index j = 0; j < p; ++j) log_lambda(j) = 2.0 - j + z(rng);
    log_lambda(0) += 0.8 * u.exposure;
    u.outcome = 0.5 * u.exposure + 1.2 * log_lambda(0) + z(rng);
    u.mediator = std::sqrt(static_cast<double>(p)) * (0.5 * log_lambda.array()).exp().matrix().asDiagonal() *
                 Pi.transpose();
    units.push_back(std::move(u));
  }
  return units;
}

}  // namespace

TEST_CASE("deflation by hand") {
  UnitRecord u;
  u.unit_id = "a";
  u.outcome = 3.0;
  u.confounders = VectorXd(0);
  u.mediator = (MatrixXd(2, 2) << 1, 2, 3, 4).finished();
  const auto out = deflate({u}, VectorXd::Unit(2, 0), VectorXd::Zero(1));
  CHECK(out[0].mediator == (MatrixXd(2, 2) << 0, 2, 0, 4).finished());
  CHECK(out[0].outcome == 3.0);
  CHECK(u.mediator(0, 0) == 1.0);

  const auto full = deflate({u}, MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  CHECK(full[0].mediator.cwiseAbs().maxCoeff() <= 1e-15);

  // Outcome adjustment uses the undeflated covariance: S = [[5, 7], [7, 10]].
  const auto adj = deflate({u}, VectorXd::Unit(2, 1), VectorXd::Constant(1, 0.5));
  CHECK(adj[0].outcome == doctest::Approx(3.0 - 0.5 * std::log(10.0)).epsilon(1e-15));

  UnitRecord flat = u;
  flat.mediator.col(1).setZero();
  CHECK(code_of([&] { deflate({flat}, VectorXd::Unit(2, 1), VectorXd::Ones(1)); }) == ErrorCode::InfeasibleLogTerm);
}

TEST_CASE("deflation removes the span and is idempotent") {
  Rng rng = make_stream(41, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const int p = 3 + rep % 4;
    const int k = 1 + rep % (p - 1);
    const auto units = testing::random_units(5, p, 0, 2 * p, rng);
    const auto H = pooled_covariance(units);
    MatrixXd thetas(p, k);
    for (int j = 0; j < k; ++j) thetas.col(j) = ProjectionVector::normalized(testing::gaussian_vector(p, rng), H).vec();
    const VectorXd betas = testing::gaussian_vector(k, rng);
    const auto once = deflate(units, thetas, betas);
    const auto twice = deflate(once, thetas, VectorXd::Zero(k));
    for (std::size_t i = 0; i < units.size(); ++i) {
      const double scale = units[i].mediator.cwiseAbs().maxCoeff();
      CHECK((once[i].mediator * thetas).cwiseAbs().maxCoeff() <= 1e-10 * scale);
      CHECK((twice[i].mediator - once[i].mediator).cwiseAbs().maxCoeff() <= 1e-12 * scale);
      CHECK(twice[i].outcome == once[i].outcome);
    }
    const auto data = MediationData::from_units(units);
    const VectorXd y = deflate_outcomes(data.outcome, data.cov, thetas, betas);
    for (std::size_t i = 0; i < units.size(); ++i) CHECK(y(i) == doctest::Approx(once[i].outcome).epsilon(1e-14));
  }
}

TEST_CASE("complement basis") {
  Rng rng = make_stream(42, 0);
  const MatrixXd thetas = testing::gaussian_matrix(5, 2, rng);
  const MatrixXd Q = complement_basis(thetas);
  REQUIRE(Q.cols() == 3);
  CHECK((Q.transpose() * Q - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((Q.transpose() * thetas).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("DfD") {
  const std::vector<MatrixXd> one{(MatrixXd(2, 2) << 1, 0.5, 0.5, 1).finished()};
  CHECK(dfd(MatrixXd::Identity(2, 2), one, VectorXd::Ones(1)) == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
  CHECK(dfd(VectorXd::Unit(2, 0), one, VectorXd::Ones(1)) == 1.0);

  Rng rng = make_stream(43, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const int p = 2 + rep % 5;
    std::vector<MatrixXd> cov;
    for (int i = 0; i < 6; ++i) cov.push_back(testing::random_spd(p, rng));
    const VectorXd w = (testing::gaussian_vector(6, rng).array().abs() + 1.0).matrix();
    const MatrixXd thetas = testing::gaussian_matrix(p, 1 + rep % p, rng);
    CHECK(dfd(thetas, cov, w) >= 1.0 - 1e-10);
    CHECK(dfd(thetas.col(0), cov, w) == 1.0);

    // Weighted geometric mean computed directly.
    double log_sum = 0.0;
    for (int i = 0; i < 6; ++i) {
      const MatrixXd P = thetas.transpose() * cov[i] * thetas;
      log_sum += w(i) * (P.diagonal().array().log().sum() - std::log(P.determinant()));
    }
    CHECK(dfd(thetas, cov, w) == doctest::Approx(std::exp(log_sum / w.sum())).epsilon(1e-9));

    // Commonly diagonalized covariances.
    const MatrixXd Pi = random_orthonormal(p, rng);
    std::vector<MatrixXd> diag_cov;
    for (int i = 0; i < 6; ++i) {
      diag_cov.push_back(Pi * (testing::gaussian_vector(p, rng).array().exp().matrix().asDiagonal()) * Pi.transpose());
    }
    CHECK(dfd(Pi, diag_cov, w) == doctest::Approx(1.0).epsilon(1e-12));
  }

  const std::vector<MatrixXd> rank_one{(MatrixXd(2, 2) << 1, 1, 1, 1).finished()};
  CHECK(code_of([&] { dfd(MatrixXd::Identity(2, 2), rank_one, VectorXd::Ones(1)); }) ==
        ErrorCode::SingularProjectedCovariance);
}

TEST_CASE("selection stops at the DfD threshold") {
  Rng rng = make_stream(44, 0);
  const auto units = testing::random_units(30, 4, 0, 12, rng);
  const auto data = MediationData::from_units(units);
  const auto H = pooled_covariance(units);
  OptimizerConfig config;
  config.n_random_starts = 2;

  const auto single = select_components(data, H, config, 4, 1.0);
  CHECK(single.size() == 1);
  CHECK(single.dfd_trace == std::vector<double>{1.0});
  REQUIRE(single.rejected_dfd.has_value());
  CHECK(*single.rejected_dfd > 1.0);

  const auto all = select_components(data, H, config, 4, std::numeric_limits<double>::infinity());
  CHECK(all.size() == 4);
  CHECK(all.dfd_trace.size() == 4);
  CHECK(all.dfd_trace[0] == 1.0);
  CHECK_FALSE(all.rejected_dfd.has_value());
  for (double d : all.dfd_trace) CHECK(d >= 1.0 - 1e-10);
  for (const auto& fit : all.fits) {
    CHECK(fit.params.theta.satisfies(H));
    CHECK(fit.trace.worst_relative_ascent <= 1e-12);
  }
  CHECK(all.thetas().cols() == 4);
  CHECK(all.betas().size() == 4);
  // Later components live in the complement of the earlier ones.
  const MatrixXd Theta = all.thetas();
  for (int k = 1; k < 4; ++k) {
    const MatrixXd Q = Theta.leftCols(k).householderQr().householderQ() * MatrixXd::Identity(4, k);
    CHECK((Q.transpose() * Theta.col(k)).cwiseAbs().maxCoeff() <= 1e-8);
  }

  CHECK(code_of([&] { select_components(data, H, config, 5); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { select_components(data, H, config, 0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("common eigenbasis keeps DfD at one through k = p") {
  Rng rng = make_stream(45, 0);
  const int p = 4;
  const MatrixXd Pi = random_orthonormal(p, rng);
  const auto units = common_basis_units(Pi, 60, rng);
  const auto data = MediationData::from_units(units);
  OptimizerConfig config;
  config.n_random_starts = 2;
  const auto set = select_components(data, pooled_covariance(units), config, p, std::numeric_limits<double>::infinity());
  REQUIRE(set.size() == static_cast<std::size_t>(p));
  for (double d : set.dfd_trace) CHECK(d == doctest::Approx(1.0).epsilon(1e-6));
  // The mediating direction is found first.
  CHECK(similarity(set.fits[0].params.theta.vec(), Pi.col(0)) >= 1.0 - 1e-6);
}

TEST_CASE("simulated design recovers both planted components") {
  auto design = SimulationDesign::case1(10, 500, 500);
  design.seed = 5;
  const auto sim = generate_dataset(design);
  const auto data = MediationData::from_units(sim.units);
  OptimizerConfig config;
  config.n_random_starts = 2;
  const auto set = select_components(data, pooled_covariance(sim.units), config, 4);
  const auto match = match_components(set.thetas(), sim.truth.Pi, sim.truth.mediation_dims);
  for (std::size_t d = 0; d < match.size(); ++d) {
    REQUIRE(match[d] >= 0);
    CHECK(similarity(set.thetas().col(match[d]), sim.truth.Pi.col(sim.truth.mediation_dims[d] - 1)) >= 0.85);
  }
}
