#pragma once

// Sequential extraction of mediation components by deflation, with the
// deviation-from-diagonality (DfD) stopping rule.

#include "gmed/data_model.hpp"
#include "gmed/optimizer.hpp"

#include <optional>
#include <vector>

namespace gmed {

struct ComponentSet {
  std::vector<ComponentFit> fits;  // in extraction order
  std::vector<double> dfd_trace;   // DfD of the first k kept components, k = 1..K
  // DfD of the candidate that crossed the threshold, when one did.
  std::optional<double> rejected_dfd;

  std::size_t size() const { return fits.size(); }
  /// p x K matrix with theta_k as column k.
  MatrixXd thetas() const;
  VectorXd betas() const;
};

/// Mediators with span(thetas) removed (M - M Q Q', Q an orthonormal basis of
/// the span) and outcomes minus sum_j beta_j log(theta_j' S_i theta_j), where
/// S_i comes from the undeflated mediators. The input is not modified.
/// Throws InfeasibleLogTerm when some theta_j' S_i theta_j <= kQuadFloor for a
/// component with beta_j != 0.
std::vector<UnitRecord> deflate(const std::vector<UnitRecord>& units, const MatrixXd& thetas,
                                const VectorXd& betas);

/// Y_i - sum_j beta_j log(theta_j' S_i theta_j) on precomputed covariances.
VectorXd deflate_outcomes(const VectorXd& outcome, const std::vector<MatrixXd>& cov, const MatrixXd& thetas,
                          const VectorXd& betas);

/// T-weighted geometric mean over units of det(diag(P_i)) / det(P_i),
/// P_i = thetas' S_i thetas. Exactly 1 for a single column.
/// Throws SingularProjectedCovariance when some P_i is not positive definite.
double dfd(const MatrixXd& thetas, const std::vector<MatrixXd>& cov, const VectorXd& weight);

/// Orthonormal basis of the orthogonal complement of span(thetas).
MatrixXd complement_basis(const MatrixXd& thetas);

/// Fits up to max_k components, each on the data deflated by the ones before.
/// A candidate whose inclusion pushes DfD above dfd_threshold is dropped and
/// extraction stops.
ComponentSet select_components(const MediationData& data, const ConstraintMatrix& H, const OptimizerConfig& config,
                               int max_k, double dfd_threshold = 2.0);

}  // namespace gmed
