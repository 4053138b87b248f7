#pragma once

// Plug-in negative hierarchical log-likelihood of the graph-mediation model,
// its analytic derivatives in the variance-model block, and the matrix whose
// generalized eigenvectors drive the projection update.
//
//   l = sum_i T_i/2 { a_i + (theta' S_i theta) exp(-a_i) }            a_i = alpha0i + X_i' alpha
//     + sum_i 1/2   { log sigma2 + (Y_i - gamma0 - X_i' gamma - beta log(theta' S_i theta))^2 / sigma2 }
//     + sum_i 1/2   { log pi2 + (alpha0i - alpha0)^2 / pi2 }

#include "gmed/data_model.hpp"

namespace gmed {

/// The three additive pieces of the objective, kept separate for auditing.
struct LikelihoodTerms {
  double covariance = 0.0;     // mediator observations given the random intercepts
  double outcome = 0.0;        // outcome regression
  double random_effect = 0.0;  // random-intercept density

  double total() const { return covariance + outcome + random_effect; }
};

/// theta' S_i theta for every unit.
VectorXd projected_variances(const VectorXd& theta, const MediationData& data);

/// Per-unit quantities at a given parameter state.
struct LikelihoodContext {
  VectorXd quad;  // theta' S_i theta (also the plug-in xi_i)
  VectorXd U;     // exp(-alpha0i - X_i' alpha)
  VectorXd V;     // Y_i - gamma0 - X_i' gamma
  bool feasible = false;  // every quad above kQuadFloor

  static LikelihoodContext at(const ModelParameters& params, const MediationData& data);
};

/// Returns +infinity in every term when the state is infeasible.
LikelihoodTerms neg_hier_loglik_terms(const ModelParameters& params, const MediationData& data);
double neg_hier_loglik(const ModelParameters& params, const MediationData& data);

/// Same objective with theta' S_i theta supplied by the caller.
LikelihoodTerms neg_hier_loglik_terms(const ModelParameters& params, const MediationData& data,
                                      const VectorXd& quad);

struct GradHess {
  VectorXd gradient;
  MatrixXd hessian;
};

struct ScalarGradHess {
  double gradient = 0.0;
  double hessian = 0.0;
};

/// Derivatives with respect to the (alpha, phi1) block.
GradHess grad_hess_alpha(const ModelParameters& params, const MediationData& data);

/// Derivatives with respect to the random intercept of unit i.
ScalarGradHess grad_hess_alpha0i(const ModelParameters& params, const MediationData& data, Index i);

/// A = sum_i { T_i U_i S_i - 2 beta (V_i - beta log xi_i) / (sigma2 xi_i) S_i },
/// evaluated at the current state and symmetrized. Throws InfeasibleState when
/// some xi_i <= kQuadFloor.
MatrixXd build_A_matrix(const ModelParameters& state, const MediationData& data);

/// 1/2 sum_i { theta' T_i U_i S_i theta + (V_i - beta log theta' S_i theta)^2 / sigma2 }
///   - lambda (theta' H theta - 1).
/// U_i, V_i, beta and sigma2 come from `state`; theta is the argument.
double lagrangian_value(const VectorXd& theta, double lambda, const ModelParameters& state,
                        const MediationData& data, const ConstraintMatrix& H);

}  // namespace gmed
