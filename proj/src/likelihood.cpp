#include "gmed/likelihood.hpp"

#include "gmed/error.hpp"

#include <cmath>
#include <limits>

namespace gmed {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_above_floor(const VectorXd& quad) {
  for (Index i = 0; i < quad.size(); ++i) {
    if (!(quad(i) > kQuadFloor)) return false;
  }
  return true;
}

}  // namespace

VectorXd projected_variances(const VectorXd& theta, const MediationData& data) {
  VectorXd quad(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    quad(i) = theta.dot(data.cov[static_cast<std::size_t>(i)] * theta);
  }
  return quad;
}

LikelihoodContext LikelihoodContext::at(const ModelParameters& params, const MediationData& data) {
  LikelihoodContext ctx;
  ctx.quad = projected_variances(params.theta.vec(), data);
  const VectorXd lin = params.alpha0i + data.design * params.alpha_block;
  ctx.U = (-lin.array()).exp().matrix();
  ctx.V = (data.outcome.array() - params.gamma0).matrix() - data.design * params.gamma_block;
  ctx.feasible = all_above_floor(ctx.quad);
  return ctx;
}

LikelihoodTerms neg_hier_loglik_terms(const ModelParameters& params, const MediationData& data,
                                      const VectorXd& quad) {
  if (!all_above_floor(quad) || !(params.sigma2 > 0.0) || !(params.pi2 > 0.0)) {
    return {kInf, kInf, kInf};
  }
  LikelihoodTerms terms;
  const double log_sigma2 = std::log(params.sigma2);
  const double log_pi2 = std::log(params.pi2);
  for (Index i = 0; i < data.n(); ++i) {
    const double a = params.alpha0i(i) + data.design.row(i).dot(params.alpha_block);
    terms.covariance += 0.5 * data.weight(i) * (a + quad(i) * std::exp(-a));

    const double resid = data.outcome(i) - params.gamma0 - data.design.row(i).dot(params.gamma_block) -
                         params.beta * std::log(quad(i));
    terms.outcome += 0.5 * (log_sigma2 + resid * resid / params.sigma2);

    const double dev = params.alpha0i(i) - params.alpha0;
    terms.random_effect += 0.5 * (log_pi2 + dev * dev / params.pi2);
  }
  if (!std::isfinite(terms.total())) return {kInf, kInf, kInf};
  return terms;
}

LikelihoodTerms neg_hier_loglik_terms(const ModelParameters& params, const MediationData& data) {
  return neg_hier_loglik_terms(params, data, projected_variances(params.theta.vec(), data));
}

double neg_hier_loglik(const ModelParameters& params, const MediationData& data) {
  return neg_hier_loglik_terms(params, data).total();
}

GradHess grad_hess_alpha(const ModelParameters& params, const MediationData& data) {
  const Index m = data.design_dim();
  GradHess out{VectorXd::Zero(m), MatrixXd::Zero(m, m)};
  const VectorXd quad = projected_variances(params.theta.vec(), data);
  for (Index i = 0; i < data.n(); ++i) {
    const auto x = data.design.row(i).transpose();
    const double a = params.alpha0i(i) + x.dot(params.alpha_block);
    const double qu = quad(i) * std::exp(-a);
    out.gradient += 0.5 * data.weight(i) * (1.0 - qu) * x;
    out.hessian.noalias() += (0.5 * data.weight(i) * qu) * (x * x.transpose());
  }
  return out;
}

ScalarGradHess grad_hess_alpha0i(const ModelParameters& params, const MediationData& data, Index i) {
  const double quad = params.theta.vec().dot(data.cov[static_cast<std::size_t>(i)] * params.theta.vec());
  const double a = params.alpha0i(i) + data.design.row(i).dot(params.alpha_block);
  const double qu = quad * std::exp(-a);
  ScalarGradHess out;
  out.gradient = 0.5 * (data.weight(i) * (1.0 - qu) + 2.0 / params.pi2 * (params.alpha0i(i) - params.alpha0));
  out.hessian = 0.5 * (data.weight(i) * qu + 2.0 / params.pi2);
  return out;
}

MatrixXd build_A_matrix(const ModelParameters& state, const MediationData& data) {
  const auto ctx = LikelihoodContext::at(state, data);
  if (!ctx.feasible) {
    throw Error(ErrorCode::InfeasibleState, "theta' S_i theta at or below the floor for some unit");
  }
  MatrixXd A = MatrixXd::Zero(data.p(), data.p());
  for (Index i = 0; i < data.n(); ++i) {
    const double xi = ctx.quad(i);
    const double coef = data.weight(i) * ctx.U(i) -
                        2.0 * state.beta * (ctx.V(i) - state.beta * std::log(xi)) / (state.sigma2 * xi);
    A.noalias() += coef * data.cov[static_cast<std::size_t>(i)];
  }
  return 0.5 * (A + A.transpose());
}

double lagrangian_value(const VectorXd& theta, double lambda, const ModelParameters& state,
                        const MediationData& data, const ConstraintMatrix& H) {
  const auto ctx = LikelihoodContext::at(state, data);
  const VectorXd quad = projected_variances(theta, data);
  if (!all_above_floor(quad)) return kInf;
  double value = 0.0;
  for (Index i = 0; i < data.n(); ++i) {
    const double r = ctx.V(i) - state.beta * std::log(quad(i));
    value += data.weight(i) * ctx.U(i) * quad(i) + r * r / state.sigma2;
  }
  return 0.5 * value - lambda * (H.quad(theta) - 1.0);
}

}  // namespace gmed
