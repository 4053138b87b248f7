#include "gmed/optimizer.hpp"

#include "gmed/causal.hpp"
#include "gmed/error.hpp"
#include "gmed/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace gmed {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxHalvings = 30;
constexpr int kPolishMaxIter = 10000;
constexpr double kPolishTol = 1e-11;
constexpr double kStepTol = 1e-13;

double relative_change(double before, double after) {
  return std::abs(before - after) / std::max(1.0, std::abs(before));
}

// Z = (1, X_i, log xi_i); the outcome regression's design.
MatrixXd outcome_design(const MediationData& data, const VectorXd& quad) {
  MatrixXd Z(data.n(), data.design_dim() + 2);
  Z.col(0).setOnes();
  Z.middleCols(1, data.design_dim()) = data.design;
  Z.col(Z.cols() - 1) = quad.array().log().matrix();
  return Z;
}

struct LeastSquares {
  VectorXd coef;
  double mean_sq_resid = 0.0;
};

LeastSquares least_squares(const MatrixXd& Z, const VectorXd& y) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < Z.cols()) {
    throw Error(ErrorCode::RankDeficientDesign,
                "outcome design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(Z.cols()));
  }
  LeastSquares out;
  out.coef = qr.solve(y);
  out.mean_sq_resid = (y - Z * out.coef).squaredNorm() / static_cast<double>(y.size());
  return out;
}

void check_feasible(const VectorXd& quad, ErrorCode code) {
  for (Index i = 0; i < quad.size(); ++i) {
    if (!(quad(i) > kQuadFloor)) {
      throw Error(code, "theta' S_i theta = " + std::to_string(quad(i)) + " for unit " + std::to_string(i));
    }
  }
}

// Terms of the objective that involve (alpha block, alpha0i) for fixed theta.
double variance_block_objective(const MediationData& data, const VectorXd& quad, const VectorXd& alpha0i,
                                const VectorXd& alpha_block, double alpha0, double pi2) {
  double f = 0.0;
  for (Index i = 0; i < data.n(); ++i) {
    const double a = alpha0i(i) + data.design.row(i).dot(alpha_block);
    const double dev = alpha0i(i) - alpha0;
    f += 0.5 * data.weight(i) * (a + quad(i) * std::exp(-a)) + 0.5 * dev * dev / pi2;
  }
  return std::isfinite(f) ? f : kInf;
}

double max_abs_diff(const ModelParameters& a, const ModelParameters& b) {
  double d = std::max({std::abs(a.alpha0 - b.alpha0), std::abs(a.gamma0 - b.gamma0), std::abs(a.beta - b.beta),
                       std::abs(std::log(a.pi2) - std::log(b.pi2)),
                       std::abs(std::log(a.sigma2) - std::log(b.sigma2))});
  d = std::max(d, (a.alpha0i - b.alpha0i).cwiseAbs().maxCoeff());
  d = std::max(d, (a.alpha_block - b.alpha_block).cwiseAbs().maxCoeff());
  d = std::max(d, (a.gamma_block - b.gamma_block).cwiseAbs().maxCoeff());
  return d;
}

// Coordinate descent over everything but theta, run to tight convergence.
ModelParameters polish_fixed_theta(ModelParameters params, const MediationData& data, const OptimizerConfig& config,
                                   bool& converged) {
  converged = false;
  for (int it = 0; it < kPolishMaxIter; ++it) {
    ModelParameters next = closed_form_update(newton_block_update(params, data, config), data);
    const double change = max_abs_diff(params, next);
    params = std::move(next);
    if (change <= kPolishTol) {
      converged = true;
      break;
    }
  }
  return params;
}

ComponentFit make_fit(ModelParameters params, const MediationData& data) {
  ComponentFit fit;
  fit.estimates = estimands(params.alpha(), params.beta, params.gamma());
  fit.objective = neg_hier_loglik(params, data);
  fit.params = std::move(params);
  return fit;
}

struct StartOutcome {
  std::optional<ComponentFit> fit;
  double worst_ascent = 0.0;
};

StartOutcome run_start(const ProjectionVector& theta0, const MediationData& data, const ConstraintMatrix& H,
                       const OptimizerConfig& config) {
  StartOutcome out;
  ModelParameters params;
  try {
    params = initialize(theta0, data);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InfeasibleStart || e.code() == ErrorCode::RankDeficientDesign) return out;
    throw;
  }

  FitTrace trace;
  double obj = neg_hier_loglik(params, data);
  trace.objective.push_back(obj);
  try {
    for (int it = 1; it <= config.max_outer_iter; ++it) {
      params = newton_block_update(std::move(params), data, config);
      params = closed_form_update(std::move(params), data);
      ThetaUpdate step = solve_theta(params, data, H);
      params.theta = std::move(step.theta);
      const double next = step.objective;
      trace.objective.push_back(next);
      trace.n_iter = it;
      out.worst_ascent = std::max(out.worst_ascent, (next - obj) / std::max(1.0, std::abs(obj)));
      const bool small = relative_change(obj, next) <= config.tol_obj;
      obj = next;
      // A rejected eigen-step means the theta block has stalled.
      if (small || !step.accepted) {
        trace.converged = true;
        break;
      }
    }
    ComponentFit fit = make_fit(std::move(params), data);
    fit.trace = std::move(trace);
    out.fit = std::move(fit);
  } catch (const Error& e) {
    // A start that wanders into a degenerate region is discarded, not fatal.
    if (e.code() != ErrorCode::RankDeficientDesign && e.code() != ErrorCode::NoFeasibleCandidate &&
        e.code() != ErrorCode::InfeasibleState) {
      throw;
    }
  }
  return out;
}

std::vector<ProjectionVector> starting_points(const MediationData& data, const ConstraintMatrix& H,
                                              const OptimizerConfig& config) {
  std::vector<ProjectionVector> starts;
  const Index p = data.p();
  if (config.include_Sbar_eigvec_starts) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(data.pooled());
    // Largest eigenvalue first.
    for (Index j = p - 1; j >= 0; --j) {
      VectorXd v = eig.eigenvectors().col(j);
      if (H.quad(v) > 0.0) starts.push_back(ProjectionVector::normalized(std::move(v), H));
    }
  }
  Rng rng = make_stream(config.seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < config.n_random_starts; ++s) {
    VectorXd v(p);
    for (Index j = 0; j < p; ++j) v(j) = normal(rng);
    v.normalize();
    starts.push_back(ProjectionVector::normalized(std::move(v), H));
  }
  return starts;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (max_outer_iter <= 0 || newton_max_iter <= 0 || n_random_starts < 0 || threads <= 0) {
    throw Error(ErrorCode::InvalidArgument, "iteration counts and thread count must be positive");
  }
  if (!(tol_obj > 0.0) || !(tol_obj < 1.0) || !(newton_tol > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "tolerances must lie in (0, 1)");
  }
  if (n_random_starts == 0 && !include_Sbar_eigvec_starts) {
    throw Error(ErrorCode::InvalidArgument, "no starting points requested");
  }
}

ModelParameters initialize(const ProjectionVector& theta0, const MediationData& data) {
  const VectorXd quad = projected_variances(theta0.vec(), data);
  check_feasible(quad, ErrorCode::InfeasibleStart);

  ModelParameters params;
  params.theta = theta0;
  params.alpha0i = quad.array().log().matrix();
  params.alpha_block = VectorXd::Zero(data.design_dim());
  params.alpha0 = params.alpha0i.mean();
  params.pi2 = std::max((params.alpha0i.array() - params.alpha0).square().mean(), kInitVarianceFloor);

  const auto ls = least_squares(outcome_design(data, quad), data.outcome);
  params.gamma0 = ls.coef(0);
  params.gamma_block = ls.coef.segment(1, data.design_dim());
  params.beta = ls.coef(ls.coef.size() - 1);
  params.sigma2 = std::max(ls.mean_sq_resid, kInitVarianceFloor);
  return params;
}

ModelParameters newton_block_update(ModelParameters params, const MediationData& data,
                                    const OptimizerConfig& config) {
  const Index n = data.n();
  const Index m = data.design_dim();
  const VectorXd quad = projected_variances(params.theta.vec(), data);
  const double inv_pi2 = 1.0 / params.pi2;

  double f = variance_block_objective(data, quad, params.alpha0i, params.alpha_block, params.alpha0, params.pi2);
  if (!std::isfinite(f)) return params;

  VectorXd h(n), r(n), c(n);
  for (int iter = 0; iter < config.newton_max_iter; ++iter) {
    // Newton on (alpha block, alpha0, alpha0i). The alpha0i block of the
    // Hessian is diagonal, so eliminating it leaves an (m+1)-square system in
    // u = (alpha block, alpha0) with matrix sum_i w_i z_i z_i', z_i = (X_i, 1).
    // Written in c_i = 1 / (pi2 h_i + 1) so that a tiny pi2 loses no digits.
    double gnorm = 0.0;
    MatrixXd schur = MatrixXd::Zero(m + 1, m + 1);
    VectorXd rhs = VectorXd::Zero(m + 1);
    VectorXd z(m + 1);
    z(m) = 1.0;
    double g_alpha0 = 0.0;
    VectorXd g_alpha = VectorXd::Zero(m);
    for (Index i = 0; i < n; ++i) {
      z.head(m) = data.design.row(i).transpose();
      const double a = params.alpha0i(i) + z.head(m).dot(params.alpha_block);
      const double qu = quad(i) * std::exp(-a);
      const double dev = params.alpha0i(i) - params.alpha0;
      r(i) = 0.5 * data.weight(i) * (1.0 - qu);
      h(i) = 0.5 * data.weight(i) * qu;
      c(i) = 1.0 / (params.pi2 * h(i) + 1.0);
      gnorm = std::max(gnorm, std::abs(r(i) + dev * inv_pi2));
      g_alpha += r(i) * z.head(m);
      g_alpha0 -= dev * inv_pi2;
      schur.noalias() += (h(i) * c(i)) * (z * z.transpose());
      rhs += (c(i) * (h(i) * dev - r(i))) * z;
    }
    gnorm = std::max({gnorm, std::abs(g_alpha0), g_alpha.size() ? g_alpha.cwiseAbs().maxCoeff() : 0.0});
    if (!(gnorm > config.newton_tol)) break;

    VectorXd du;
    Eigen::LDLT<MatrixXd> ldlt(schur);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
        ldlt.vectorD().minCoeff() > 1e-14 * std::max(1.0, schur.diagonal().maxCoeff())) {
      du = ldlt.solve(rhs);
    } else {
      du = schur.completeOrthogonalDecomposition().solve(rhs);
    }
    const VectorXd d_alpha = du.head(m);
    const double d_alpha0 = du(m);
    VectorXd d0(n);
    for (Index i = 0; i < n; ++i) {
      const double dev = params.alpha0i(i) - params.alpha0;
      d0(i) = c(i) * (d_alpha0 - dev - params.pi2 * (r(i) + h(i) * data.design.row(i).dot(d_alpha)));
    }
    // Once the step is at rounding level the gradient cannot shrink further.
    const double scale = 1.0 + std::max({params.alpha0i.cwiseAbs().maxCoeff(), std::abs(params.alpha0),
                                         m ? params.alpha_block.cwiseAbs().maxCoeff() : 0.0});
    const double step_norm = std::max(d0.cwiseAbs().maxCoeff(), du.cwiseAbs().maxCoeff());
    if (!(step_norm > kStepTol * scale)) break;

    double step = 1.0;
    bool accepted = false;
    double f_new = f;
    VectorXd a0_trial, alpha_trial;
    double alpha0_trial = params.alpha0;
    for (int k = 0; k <= kMaxHalvings; ++k, step *= 0.5) {
      a0_trial = params.alpha0i + step * d0;
      alpha_trial = params.alpha_block + step * d_alpha;
      alpha0_trial = params.alpha0 + step * d_alpha0;
      f_new = variance_block_objective(data, quad, a0_trial, alpha_trial, alpha0_trial, params.pi2);
      if (f_new <= f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    params.alpha0i = std::move(a0_trial);
    params.alpha_block = std::move(alpha_trial);
    params.alpha0 = alpha0_trial;
    f = f_new;
  }
  return params;
}

ModelParameters closed_form_update(ModelParameters params, const MediationData& data) {
  const double n = static_cast<double>(data.n());
  params.alpha0 = params.alpha0i.sum() / n;
  params.pi2 = std::max((params.alpha0i.array() - params.alpha0).square().sum() / n, kVarianceFloor);

  const VectorXd quad = projected_variances(params.theta.vec(), data);
  check_feasible(quad, ErrorCode::InfeasibleState);
  const auto ls = least_squares(outcome_design(data, quad), data.outcome);
  params.gamma0 = ls.coef(0);
  params.gamma_block = ls.coef.segment(1, data.design_dim());
  params.beta = ls.coef(ls.coef.size() - 1);
  params.sigma2 = std::max(ls.mean_sq_resid, kVarianceFloor);
  return params;
}

std::vector<EigenPair> h_eigenpairs(const MatrixXd& A, const ConstraintMatrix& H) {
  const MatrixXd& root = H.inverse_sqrt();
  MatrixXd B = root * A * root;
  B = 0.5 * (B + B.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(B);
  std::vector<EigenPair> pairs;
  pairs.reserve(static_cast<std::size_t>(A.rows()));
  for (Index j = 0; j < A.rows(); ++j) {
    VectorXd v = root * eig.eigenvectors().col(j);
    apply_sign_convention(v);
    pairs.push_back({eig.eigenvalues()(j), std::move(v)});
  }
  return pairs;
}

ThetaUpdate solve_theta(const ModelParameters& state, const MediationData& data, const ConstraintMatrix& H) {
  const MatrixXd A = build_A_matrix(state, data);
  const auto pairs = h_eigenpairs(A, H);
  const Index p = data.p();
  const Index n = data.n();

  MatrixXd cand(p, p);
  for (Index j = 0; j < p; ++j) cand.col(j) = pairs[static_cast<std::size_t>(j)].vector;

  // xi(i, j) = theta_j' S_i theta_j for every candidate at once.
  MatrixXd xi(n, p);
  MatrixXd work(p, p);
  for (Index i = 0; i < n; ++i) {
    work.noalias() = data.cov[static_cast<std::size_t>(i)] * cand;
    xi.row(i) = cand.cwiseProduct(work).colwise().sum();
  }

  const auto ctx = LikelihoodContext::at(state, data);
  Index best = -1;
  double best_value = kInf;
  for (Index j = 0; j < p; ++j) {
    if (!(xi.col(j).minCoeff() > kQuadFloor)) continue;
    double value = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double r = ctx.V(i) - state.beta * std::log(xi(i, j));
      value += data.weight(i) * ctx.U(i) * xi(i, j) + r * r / state.sigma2;
    }
    const auto& pair = pairs[static_cast<std::size_t>(j)];
    value = 0.5 * value - pair.value * (H.quad(pair.vector) - 1.0);
    if (value < best_value) {
      best_value = value;
      best = j;
    }
  }
  if (best < 0) throw Error(ErrorCode::NoFeasibleCandidate, "every eigenvector gives a degenerate variance");

  const double current = neg_hier_loglik(state, data);
  ModelParameters trial = state;
  trial.theta = ProjectionVector::from_normalized(pairs[static_cast<std::size_t>(best)].vector);
  const double proposed = neg_hier_loglik_terms(trial, data, xi.col(best)).total();

  ThetaUpdate out;
  if (proposed <= current) {
    out.theta = std::move(trial.theta);
    out.lambda = pairs[static_cast<std::size_t>(best)].value;
    out.accepted = true;
    out.objective = proposed;
  } else {
    const VectorXd& th = state.theta.vec();
    out.theta = state.theta;
    out.lambda = th.dot(A * th) / H.quad(th);
    out.accepted = false;
    out.objective = current;
  }
  return out;
}

ComponentFit fit_component(const MediationData& data, const ConstraintMatrix& H, const OptimizerConfig& config) {
  config.validate();
  if (H.dim() != data.p()) {
    throw Error(ErrorCode::DimensionMismatch, "constraint matrix dimension differs from mediator dimension");
  }
  {
    // Collinear exposure/confounders make every start fail; report that directly.
    MatrixXd Z(data.n(), data.design_dim() + 1);
    Z.col(0).setOnes();
    Z.rightCols(data.design_dim()) = data.design;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(Z);
    qr.setThreshold(1e-10);
    if (qr.rank() < Z.cols()) {
      throw Error(ErrorCode::RankDeficientDesign, "exposure and confounders are collinear with the intercept");
    }
  }

  const auto starts = starting_points(data, H, config);
  std::vector<StartOutcome> outcomes(starts.size());
  parallel_for(starts.size(), config.threads,
               [&](std::size_t s) { outcomes[s] = run_start(starts[s], data, H, config); });

  std::optional<std::size_t> best;
  double worst_ascent = 0.0;
  int failed = 0;
  for (std::size_t s = 0; s < outcomes.size(); ++s) {
    worst_ascent = std::max(worst_ascent, outcomes[s].worst_ascent);
    if (!outcomes[s].fit) {
      ++failed;
      continue;
    }
    if (!best || outcomes[s].fit->objective < outcomes[*best].fit->objective) best = s;
  }
  if (!best) throw Error(ErrorCode::AllStartsInfeasible, std::to_string(starts.size()) + " starts failed");

  ComponentFit fit = std::move(*outcomes[*best].fit);
  // Only the winner is driven to tight convergence in the non-theta blocks.
  bool polished = false;
  const double before = fit.objective;
  FitTrace trace = std::move(fit.trace);
  fit = make_fit(polish_fixed_theta(std::move(fit.params), data, config, polished), data);
  worst_ascent = std::max(worst_ascent, (fit.objective - before) / std::max(1.0, std::abs(before)));
  trace.objective.push_back(fit.objective);
  fit.trace = std::move(trace);
  fit.trace.chosen_start_index = static_cast<int>(*best);
  fit.trace.worst_relative_ascent = worst_ascent;
  fit.trace.n_starts = static_cast<int>(starts.size());
  fit.trace.n_failed_starts = failed;
  return fit;
}

ComponentFit refit_fixed_theta(const ProjectionVector& theta, const MediationData& data,
                               const OptimizerConfig& config) {
  ModelParameters params = initialize(theta, data);
  FitTrace trace;
  trace.objective.push_back(neg_hier_loglik(params, data));
  bool converged = false;
  params = polish_fixed_theta(std::move(params), data, config, converged);
  ComponentFit fit = make_fit(std::move(params), data);
  trace.objective.push_back(fit.objective);
  trace.converged = converged;
  trace.n_iter = 1;
  trace.chosen_start_index = 0;
  trace.n_starts = 1;
  fit.trace = std::move(trace);
  return fit;
}

}  // namespace gmed
