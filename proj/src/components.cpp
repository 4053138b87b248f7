#include "gmed/components.hpp"

#include "gmed/error.hpp"
#include "gmed/parallel.hpp"

#include <cmath>
#include <limits>

namespace gmed {

namespace {

MatrixXd span_basis(const MatrixXd& thetas) {
  Eigen::HouseholderQR<MatrixXd> qr(thetas);
  return qr.householderQ() * MatrixXd::Identity(thetas.rows(), thetas.cols());
}

void check_columns(const MatrixXd& thetas, const VectorXd& betas) {
  if (thetas.cols() != betas.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one beta is needed per theta column");
  }
}

}  // namespace

MatrixXd ComponentSet::thetas() const {
  if (fits.empty()) return {};
  MatrixXd out(fits.front().params.theta.dim(), static_cast<Index>(fits.size()));
  for (std::size_t k = 0; k < fits.size(); ++k) out.col(static_cast<Index>(k)) = fits[k].params.theta.vec();
  return out;
}

VectorXd ComponentSet::betas() const {
  VectorXd out(static_cast<Index>(fits.size()));
  for (std::size_t k = 0; k < fits.size(); ++k) out(static_cast<Index>(k)) = fits[k].params.beta;
  return out;
}

MatrixXd complement_basis(const MatrixXd& thetas) {
  const Index p = thetas.rows();
  const Index k = thetas.cols();
  if (k == 0) return MatrixXd::Identity(p, p);
  Eigen::HouseholderQR<MatrixXd> qr(thetas);
  const MatrixXd Q = qr.householderQ();
  return Q.rightCols(p - k);
}

VectorXd deflate_outcomes(const VectorXd& outcome, const std::vector<MatrixXd>& cov, const MatrixXd& thetas,
                          const VectorXd& betas) {
  check_columns(thetas, betas);
  VectorXd out = outcome;
  for (Index i = 0; i < outcome.size(); ++i) {
    const MatrixXd& S = cov[static_cast<std::size_t>(i)];
    for (Index j = 0; j < thetas.cols(); ++j) {
      if (betas(j) == 0.0) continue;
      const double quad = thetas.col(j).dot(S * thetas.col(j));
      if (!(quad > kQuadFloor)) {
        throw Error(ErrorCode::InfeasibleLogTerm,
                    "component " + std::to_string(j + 1) + " has variance " + std::to_string(quad) + " for unit " +
                        std::to_string(i));
      }
      out(i) -= betas(j) * std::log(quad);
    }
  }
  return out;
}

std::vector<UnitRecord> deflate(const std::vector<UnitRecord>& units, const MatrixXd& thetas, const VectorXd& betas) {
  check_columns(thetas, betas);
  std::vector<MatrixXd> cov;
  VectorXd outcome(static_cast<Index>(units.size()));
  cov.reserve(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i].dim() != thetas.rows()) {
      throw Error(ErrorCode::DimensionMismatch, "theta length differs from mediator dimension");
    }
    const auto& M = units[i].mediator;
    cov.push_back(M.transpose() * M / static_cast<double>(M.rows()));
    outcome(static_cast<Index>(i)) = units[i].outcome;
  }
  const VectorXd adjusted = deflate_outcomes(outcome, cov, thetas, betas);

  std::vector<UnitRecord> out = units;
  if (thetas.cols() == 0) return out;
  const MatrixXd Q = span_basis(thetas);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].mediator -= (units[i].mediator * Q) * Q.transpose();
    out[i].outcome = adjusted(static_cast<Index>(i));
  }
  return out;
}

double dfd(const MatrixXd& thetas, const std::vector<MatrixXd>& cov, const VectorXd& weight) {
  if (thetas.cols() == 0) throw Error(ErrorCode::InvalidArgument, "DfD needs at least one component");
  if (thetas.cols() == 1) return 1.0;
  const double total = weight.sum();
  double log_dfd = 0.0;
  for (std::size_t i = 0; i < cov.size(); ++i) {
    MatrixXd P = thetas.transpose() * cov[i] * thetas;
    P = 0.5 * (P + P.transpose()).eval();
    Eigen::LLT<MatrixXd> llt(P);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::SingularProjectedCovariance, "projected covariance of unit " + std::to_string(i));
    }
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double log_diag = P.diagonal().array().log().sum();
    if (!std::isfinite(log_det) || !std::isfinite(log_diag)) {
      throw Error(ErrorCode::SingularProjectedCovariance, "projected covariance of unit " + std::to_string(i));
    }
    log_dfd += weight(static_cast<Index>(i)) / total * (log_diag - log_det);
  }
  return std::exp(log_dfd);
}

ComponentSet select_components(const MediationData& data, const ConstraintMatrix& H, const OptimizerConfig& config,
                               int max_k, double dfd_threshold) {
  if (max_k < 1 || max_k > data.p()) {
    throw Error(ErrorCode::InvalidArgument,
                "max_k must lie in [1, " + std::to_string(data.p()) + "], got " + std::to_string(max_k));
  }
  if (std::isnan(dfd_threshold)) throw Error(ErrorCode::InvalidArgument, "DfD threshold is NaN");

  ComponentSet set;
  const Index p = data.p();
  MatrixXd thetas(p, 0);
  VectorXd betas(0);
  for (int k = 0; k < max_k; ++k) {
    // Deflated mediators, expressed in a basis of the remaining subspace. For
    // theta in that subspace theta' S_i theta is the same on deflated and
    // original data, so the reduced problem is the deflated one without the
    // null directions.
    const MatrixXd basis = complement_basis(thetas);
    MediationData reduced = data.reduced(basis);
    reduced.outcome = deflate_outcomes(data.outcome, data.cov, thetas, betas);
    const ConstraintMatrix H_k = H.restricted(basis);

    OptimizerConfig cfg = config;
    cfg.seed = make_stream(config.seed, static_cast<std::uint64_t>(k))();
    ComponentFit fit = fit_component(reduced, H_k, cfg);
    fit.params.theta = ProjectionVector::from_normalized(basis * fit.params.theta.vec());

    MatrixXd candidate(p, k + 1);
    candidate << thetas, fit.params.theta.vec();
    const double value = dfd(candidate, data.cov, data.weight);
    if (value > dfd_threshold) {
      set.rejected_dfd = value;
      break;
    }
    set.dfd_trace.push_back(value);
    thetas = std::move(candidate);
    betas.conservativeResize(k + 1);
    betas(k) = fit.params.beta;
    set.fits.push_back(std::move(fit));
  }
  return set;
}

}  // namespace gmed
