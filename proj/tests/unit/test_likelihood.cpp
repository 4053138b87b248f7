#include "doctest.h"

#include "fixtures.hpp"
#include "gmed/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

using namespace gmed;
using gmed::testing::code_of;

namespace {

MediationData single_unit(const MatrixXd& M, double exposure = 0.0, double outcome = 0.0) {
  UnitRecord u;
  u.unit_id = "a";
  u.exposure = exposure;
  u.outcome = outcome;
  u.confounders = VectorXd(0);
  u.mediator = M;
  return MediationData::from_units({u});
}

ModelParameters zero_params(Index p, Index n) {
  ModelParameters params;
  params.theta = ProjectionVector::from_normalized(VectorXd::Unit(p, 0));
  params.alpha0i = VectorXd::Zero(n);
  params.alpha_block = VectorXd::Zero(1);
  params.gamma_block = VectorXd::Zero(1);
  params.pi2 = 1.0;
  params.sigma2 = 1.0;
  return params;
}

struct Fixture {
  MediationData data;
  ConstraintMatrix H = ConstraintMatrix::identity(1);
};

Fixture random_fixture(Rng& rng, int n = 6, int p = 3, int q = 1, int T = 5) {
  const auto units = testing::random_units(n, p, q, T, rng);
  Fixture f{MediationData::from_units(units), ConstraintMatrix::identity(p)};
  f.H = pooled_covariance(units);
  return f;
}

}  // namespace

TEST_CASE("objective by hand for a single unit") {
  const auto data = single_unit((MatrixXd(2, 1) << 1, -1).finished());
  const auto params = zero_params(1, 1);
  const auto terms = neg_hier_loglik_terms(params, data);
  CHECK(terms.covariance == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(terms.outcome == 0.0);
  CHECK(terms.random_effect == 0.0);
  CHECK(neg_hier_loglik(params, data) == doctest::Approx(1.0).epsilon(1e-15));

  const auto flat = single_unit(MatrixXd::Zero(2, 1));
  CHECK(neg_hier_loglik(params, flat) == std::numeric_limits<double>::infinity());
  CHECK_FALSE(LikelihoodContext::at(params, flat).feasible);

  auto bad = params;
  bad.sigma2 = 0.0;
  CHECK(neg_hier_loglik(bad, data) == std::numeric_limits<double>::infinity());
}

TEST_CASE("objective terms against an independent expansion") {
  Rng rng = make_stream(21, 0);
  for (int rep = 0; rep < 20; ++rep) {
    auto f = random_fixture(rng);
    const auto params = testing::random_params(f.data, f.H, rng);
    const VectorXd& th = params.theta.vec();
    double cov = 0.0, out = 0.0, re = 0.0;
    for (Index i = 0; i < f.data.n(); ++i) {
      const double T = f.data.weight(i);
      const double q = th.dot(f.data.cov[i] * th);
      const VectorXd x = f.data.design.row(i).transpose();
      const double a = params.alpha0i(i) + x.dot(params.alpha_block);
      cov += T / 2 * (a + q * std::exp(-a));
      const double r = f.data.outcome(i) - params.gamma0 - x.dot(params.gamma_block) - params.beta * std::log(q);
      out += 0.5 * (std::log(params.sigma2) + r * r / params.sigma2);
      const double d = params.alpha0i(i) - params.alpha0;
      re += 0.5 * (std::log(params.pi2) + d * d / params.pi2);
    }
    const auto terms = neg_hier_loglik_terms(params, f.data);
    CHECK(terms.covariance == doctest::Approx(cov).epsilon(1e-12));
    CHECK(terms.outcome == doctest::Approx(out).epsilon(1e-12));
    CHECK(terms.random_effect == doctest::Approx(re).epsilon(1e-12));
    CHECK(terms.total() == doctest::Approx(cov + out + re).epsilon(1e-12));

    // The objective is even in theta.
    auto flipped = params;
    flipped.theta = ProjectionVector::from_normalized(-th);
    CHECK(neg_hier_loglik(flipped, f.data) == doctest::Approx(terms.total()).epsilon(1e-14));
  }
}

TEST_CASE("doubling T doubles the covariance term") {
  Rng rng = make_stream(22, 0);
  auto f = random_fixture(rng);
  const auto params = testing::random_params(f.data, f.H, rng);
  auto doubled = f.data;
  doubled.weight *= 2.0;
  const auto a = neg_hier_loglik_terms(params, f.data);
  const auto b = neg_hier_loglik_terms(params, doubled);
  CHECK(b.covariance == doctest::Approx(2.0 * a.covariance).epsilon(1e-14));
  CHECK(b.outcome == a.outcome);
  CHECK(b.random_effect == a.random_effect);
}

TEST_CASE("analytic derivatives match central differences") {
  Rng rng = make_stream(23, 0);
  const double h = 1e-5;
  double worst_g = 0.0, worst_h = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    auto f = random_fixture(rng, 5, 3, rep % 3, 4);
    const auto params = testing::random_params(f.data, f.H, rng);
    const Index d = f.data.design_dim();

    const auto gh = grad_hess_alpha(params, f.data);
    REQUIRE(gh.gradient.size() == d);
    CHECK(gh.hessian.isApprox(gh.hessian.transpose()));
    CHECK(gh.hessian.selfadjointView<Eigen::Lower>().ldlt().vectorD().minCoeff() >= -1e-12);
    for (Index k = 0; k < d; ++k) {
      auto up = params, dn = params;
      up.alpha_block(k) += h;
      dn.alpha_block(k) -= h;
      const double fd = (neg_hier_loglik(up, f.data) - neg_hier_loglik(dn, f.data)) / (2 * h);
      worst_g = std::max(worst_g, std::abs(fd - gh.gradient(k)));
      const VectorXd fdh = (grad_hess_alpha(up, f.data).gradient - grad_hess_alpha(dn, f.data).gradient) / (2 * h);
      worst_h = std::max(worst_h, (fdh - gh.hessian.col(k)).cwiseAbs().maxCoeff());
    }

    for (Index i = 0; i < f.data.n(); ++i) {
      const auto s = grad_hess_alpha0i(params, f.data, i);
      CHECK(s.hessian >= 1.0 / params.pi2);
      auto up = params, dn = params;
      up.alpha0i(i) += h;
      dn.alpha0i(i) -= h;
      const double fd = (neg_hier_loglik(up, f.data) - neg_hier_loglik(dn, f.data)) / (2 * h);
      worst_g = std::max(worst_g, std::abs(fd - s.gradient));
      const double fdh = (grad_hess_alpha0i(up, f.data, i).gradient - grad_hess_alpha0i(dn, f.data, i).gradient) / (2 * h);
      worst_h = std::max(worst_h, std::abs(fdh - s.hessian));
    }
  }
  CHECK(worst_g <= 1e-6);
  CHECK(worst_h <= 1e-6);
}

TEST_CASE("derivatives vanish at a stationary point") {
  Rng rng = make_stream(24, 0);
  auto f = random_fixture(rng, 4, 2, 0, 6);
  auto params = testing::random_params(f.data, f.H, rng);
  params.alpha_block.setZero();
  const VectorXd quad = projected_variances(params.theta.vec(), f.data);
  params.alpha0i = quad.array().log().matrix();
  params.alpha0 = params.alpha0i(0);
  CHECK(grad_hess_alpha(params, f.data).gradient.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(grad_hess_alpha0i(params, f.data, 0).gradient) <= 1e-12);

  // q = 0, n = 1: gradient is (T/2)(1 - quad U) X.
  const auto one = single_unit((MatrixXd(3, 1) << 1, 2, -1).finished(), 1.0);
  auto p1 = zero_params(1, 1);
  p1.alpha_block(0) = 0.3;
  const double U = std::exp(-0.3);
  const double quad1 = 6.0 / 3.0;
  CHECK(grad_hess_alpha(p1, one).gradient(0) == doctest::Approx(1.5 * (1 - quad1 * U)).epsilon(1e-14));
}

TEST_CASE("A matrix") {
  Rng rng = make_stream(25, 0);
  auto f = random_fixture(rng);
  auto params = testing::random_params(f.data, f.H, rng);
  const auto ctx = LikelihoodContext::at(params, f.data);

  params.beta = 0.0;
  MatrixXd expected = MatrixXd::Zero(f.data.p(), f.data.p());
  for (Index i = 0; i < f.data.n(); ++i) expected += f.data.weight(i) * ctx.U(i) * f.data.cov[i];
  CHECK(build_A_matrix(params, f.data).isApprox(expected, 1e-13));

  params.beta = 0.7;
  const MatrixXd A = build_A_matrix(params, f.data);
  CHECK(A == A.transpose());
  std::vector<Index> order(f.data.n());
  for (Index i = 0; i < f.data.n(); ++i) order[i] = f.data.n() - 1 - i;
  auto perm = params;
  for (Index i = 0; i < f.data.n(); ++i) perm.alpha0i(i) = params.alpha0i(order[i]);
  CHECK(build_A_matrix(perm, f.data.resample(order)).isApprox(A, 1e-13));

  // Scalar case by hand.
  const auto one = single_unit((MatrixXd(2, 1) << 2, 0).finished(), 0.0, 0.4);
  auto p1 = zero_params(1, 1);
  p1.alpha0i(0) = 0.2;
  p1.beta = 0.5;
  p1.gamma0 = 0.1;
  p1.sigma2 = 0.8;
  const double S = 2.0, U = std::exp(-0.2), V = 0.3;
  const double hand = 2 * U * S - 2 * 0.5 * (V - 0.5 * std::log(S)) * S / (0.8 * S);
  CHECK(build_A_matrix(p1, one)(0, 0) == doctest::Approx(hand).epsilon(1e-14));

  CHECK(code_of([&] { build_A_matrix(p1, single_unit(MatrixXd::Zero(2, 1))); }) == ErrorCode::InfeasibleState);
}

TEST_CASE("Lagrangian") {
  const auto one = single_unit((MatrixXd(2, 2) << 1, 1, 1, -1).finished());
  auto params = zero_params(2, 1);
  params.alpha0i(0) = 0.4;
  const auto H = ConstraintMatrix::identity(2);
  VectorXd th(2);
  th << 0.6, 0.8;
  const double quad = th.dot(one.cov[0] * th);
  const double expected = 0.5 * 2 * std::exp(-0.4) * quad;
  CHECK(lagrangian_value(th, 3.0, params, one, H) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(lagrangian_value(-th, 3.0, params, one, H) == doctest::Approx(expected).epsilon(1e-14));
  const VectorXd longer = 2.0 * th;
  CHECK(lagrangian_value(longer, 1.5, params, one, H) ==
        doctest::Approx(0.5 * 2 * std::exp(-0.4) * 4 * quad - 1.5 * 3).epsilon(1e-14));
  CHECK(lagrangian_value(VectorXd::Zero(2), 1.0, params, one, H) == std::numeric_limits<double>::infinity());
}

TEST_CASE("plug-in objective approaches the population objective as T grows") {
  const int p = 3, n = 40, reps = 15;
  std::vector<double> medians;
  for (int T : {10, 100, 1000}) {
    std::vector<double> gaps;
    for (int r = 0; r < reps; ++r) {
      Rng rng = make_stream(26, r);
      std::vector<UnitRecord> units;
      std::vector<MatrixXd> sigmas;
      for (int i = 0; i < n; ++i) {
        const MatrixXd Sigma = testing::random_spd(p, rng);
        const MatrixXd L = Sigma.llt().matrixL();
        UnitRecord u;
        u.unit_id = std::to_string(i);
        u.exposure = i % 2;
        u.confounders = VectorXd(0);
        u.outcome = 0.1 * i;
        u.mediator = testing::gaussian_matrix(T, p, rng) * L.transpose();
        units.push_back(u);
        sigmas.push_back(Sigma);
      }
      const auto data = MediationData::from_units(units);
      const auto H = ConstraintMatrix::identity(p);
      const auto params = testing::random_params(data, H, rng);
      VectorXd true_quad(n);
      for (int i = 0; i < n; ++i) true_quad(i) = params.theta.vec().dot(sigmas[i] * params.theta.vec());
      // Compare per observation so the T/2 factor does not dominate.
      const double plug = neg_hier_loglik_terms(params, data).total();
      const double pop = neg_hier_loglik_terms(params, data, true_quad).total();
      gaps.push_back(std::abs(plug - pop) / (n * T));
    }
    std::nth_element(gaps.begin(), gaps.begin() + reps / 2, gaps.end());
    medians.push_back(gaps[reps / 2]);
  }
  CHECK(medians[1] < medians[0]);
  CHECK(medians[2] < medians[1]);
}
