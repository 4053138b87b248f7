#pragma once

// Block coordinate descent for one mediation component: damped Newton on the
// variance-model block, closed-form updates for the intercept, variance and
// outcome-regression parameters, and a guarded generalized-eigenvector step
// for the projection theta. Multiple starts; the best objective wins.

#include "gmed/data_model.hpp"
#include "gmed/likelihood.hpp"

#include <cstdint>
#include <vector>

namespace gmed {

// Floors applied by the closed-form variance updates and by initialization.
inline constexpr double kVarianceFloor = 1e-10;
inline constexpr double kInitVarianceFloor = 1e-6;

struct OptimizerConfig {
  int max_outer_iter = 200;
  double tol_obj = 1e-8;  // relative objective change
  int newton_max_iter = 50;
  double newton_tol = 1e-10;  // gradient max-norm
  int n_random_starts = 10;
  bool include_Sbar_eigvec_starts = true;
  std::uint64_t seed = 0;
  int threads = 1;  // concurrent starts

  /// Throws Error(InvalidArgument) on non-positive settings or tol_obj >= 1.
  void validate() const;
};

struct FitTrace {
  std::vector<double> objective;  // one entry per outer iteration, plus the start
  bool converged = false;
  int n_iter = 0;
  int chosen_start_index = -1;
  // Largest (l[s+1] - l[s]) / max(1, |l[s]|) seen over every start's trace.
  double worst_relative_ascent = 0.0;
  int n_starts = 0;
  int n_failed_starts = 0;
};

struct ComponentFit {
  ModelParameters params;
  CausalEstimates estimates;
  double objective = 0.0;
  FitTrace trace;
};

/// Starting state for a given theta: alpha0i = log(theta' S_i theta), alpha block 0,
/// (alpha0, pi2) from the alpha0i, outcome coefficients by least squares.
/// Throws InfeasibleStart when theta' S_i theta <= kQuadFloor for some unit.
ModelParameters initialize(const ProjectionVector& theta0, const MediationData& data);

/// Damped Newton on (alpha block, alpha0i) with theta, alpha0 and pi2 held fixed.
/// Never increases the objective.
ModelParameters newton_block_update(ModelParameters params, const MediationData& data,
                                    const OptimizerConfig& config = {});

/// Exact minimizers in (alpha0, pi2) and (gamma0, gamma block, beta, sigma2).
/// Throws RankDeficientDesign when (1, X_i, log theta' S_i theta) is collinear.
ModelParameters closed_form_update(ModelParameters params, const MediationData& data);

/// Generalized eigenpair of A with respect to H, through H^{-1/2} A H^{-1/2}.
/// `vector` satisfies vector' H vector = 1 and the sign convention.
struct EigenPair {
  double value = 0.0;
  VectorXd vector;
};

/// All p pairs in ascending eigenvalue order.
std::vector<EigenPair> h_eigenpairs(const MatrixXd& A, const ConstraintMatrix& H);

struct ThetaUpdate {
  ProjectionVector theta;
  double lambda = 0.0;
  bool accepted = false;  // false: incoming theta retained
  double objective = 0.0; // full objective after the step
};

/// Candidate with the smallest Lagrangian among all eigenpairs of A w.r.t. H;
/// kept only if the full objective does not increase.
/// Throws NoFeasibleCandidate if every eigenvector is infeasible.
ThetaUpdate solve_theta(const ModelParameters& state, const MediationData& data, const ConstraintMatrix& H);

/// Full multi-start fit of one component.
/// Throws AllStartsInfeasible when no start produced a fit.
ComponentFit fit_component(const MediationData& data, const ConstraintMatrix& H, const OptimizerConfig& config);

/// Fit every parameter except theta, which stays fixed.
ComponentFit refit_fixed_theta(const ProjectionVector& theta, const MediationData& data,
                               const OptimizerConfig& config = {});

}  // namespace gmed
