#pragma once

// Domain types shared by every stage of the graph-mediation pipeline, plus
// dataset ingestion and the covariance pre-computation used by the fitter.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gmed {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Lower bound on any quadratic form that is passed through log().
inline constexpr double kQuadFloor = 1e-12;

/// One experimental unit: exposure, confounders, scalar outcome and the
/// T_i x p matrix of mediator observations (row t is observation t).
struct UnitRecord {
  std::string unit_id;
  double exposure = 0.0;
  VectorXd confounders;  // length q, possibly empty
  double outcome = 0.0;
  MatrixXd mediator;

  Index n_obs() const { return mediator.rows(); }
  Index dim() const { return mediator.cols(); }
};

/// Stacked (X_i, W_i) of length q + 1.
VectorXd design_vector(const UnitRecord& unit);

/// Second-moment matrix S_i = M_i^T M_i / T_i of one unit, with weight T_i.
struct SampleCovariance {
  MatrixXd S;
  int weight = 0;
};

enum class ConstraintKind { Identity, PooledCovariance };

const char* to_string(ConstraintKind kind) noexcept;
ConstraintKind parse_constraint_kind(const std::string& text);

/// Positive-definite matrix H of the normalization theta^T H theta = 1.
/// Caches H^{-1/2}, which the theta update needs on every iteration.
class ConstraintMatrix {
 public:
  /// Throws Error(SingularPooledCovariance) unless H is symmetric positive definite.
  ConstraintMatrix(MatrixXd H, ConstraintKind kind);

  static ConstraintMatrix identity(Index p);

  const MatrixXd& matrix() const { return H_; }
  const MatrixXd& inverse_sqrt() const { return inv_sqrt_; }
  ConstraintKind kind() const { return kind_; }
  Index dim() const { return H_.rows(); }

  double quad(const VectorXd& v) const { return v.dot(H_ * v); }

  /// Restriction Q^T H Q to the column space of an orthonormal basis Q.
  ConstraintMatrix restricted(const MatrixXd& basis) const;

 private:
  MatrixXd H_;
  MatrixXd inv_sqrt_;
  ConstraintKind kind_;
};

/// Flip v so that its largest-magnitude entry is positive (ties: lowest index).
void apply_sign_convention(VectorXd& v);

/// A projection vector theta with theta^T H theta = 1 and the sign convention applied.
class ProjectionVector {
 public:
  ProjectionVector() = default;

  /// Rescales v onto the H-unit sphere and fixes its sign.
  static ProjectionVector normalized(VectorXd v, const ConstraintMatrix& H);

  /// Wraps a vector that is already normalized (e.g. read back from disk).
  /// Only the sign convention is enforced.
  static ProjectionVector from_normalized(VectorXd v);

  const VectorXd& vec() const { return theta_; }
  Index dim() const { return theta_.size(); }

  bool satisfies(const ConstraintMatrix& H, double tol = 1e-8) const;

 private:
  explicit ProjectionVector(VectorXd v) : theta_(std::move(v)) {}
  VectorXd theta_;
};

/// Full parameter set of one mediation component.
struct ModelParameters {
  ProjectionVector theta;
  VectorXd alpha0i;      // random intercepts, length n
  double alpha0 = 0.0;
  VectorXd alpha_block;  // (alpha, phi1), length q + 1
  double gamma0 = 0.0;
  VectorXd gamma_block;  // (gamma, phi2), length q + 1
  double beta = 0.0;
  double pi2 = 1.0;      // variance of the random intercept
  double sigma2 = 1.0;   // outcome error variance

  double alpha() const { return alpha_block.size() ? alpha_block(0) : 0.0; }
  double gamma() const { return gamma_block.size() ? gamma_block(0) : 0.0; }
};

/// Average total, indirect and direct effect. ate == aie + ade by construction.
struct CausalEstimates {
  double ate = 0.0;
  double aie = 0.0;
  double ade = 0.0;
};

// ---------------------------------------------------------------------------
// Ingestion

struct IngestOptions {
  // Subtract per-unit column means before forming second moments.
  bool center = false;
};

/// Reads the subject table (unit_id,exposure,outcome,w1..wq) and the mediator
/// observations. `mediators` is either a directory holding <unit_id>.csv per
/// unit or a single long-format CSV with header unit_id,t,v1..vp.
std::vector<UnitRecord> load_dataset(const std::filesystem::path& subjects,
                                     const std::filesystem::path& mediators,
                                     const IngestOptions& options = {});

enum class MediatorLayout { PerUnitDirectory, LongTable };

/// Writes a dataset in the layout load_dataset reads. Values are printed with
/// 17 significant digits so a reload is bit-identical.
void write_dataset(const std::vector<UnitRecord>& units,
                   const std::filesystem::path& subjects,
                   const std::filesystem::path& mediators,
                   MediatorLayout layout = MediatorLayout::PerUnitDirectory);

/// Throws on inconsistent dimensions or non-finite values.
void validate_units(const std::vector<UnitRecord>& units);

std::vector<SampleCovariance> sample_covariances(const std::vector<UnitRecord>& units);

/// T-weighted average of the S_i. Throws SingularPooledCovariance when it is
/// not positive definite.
ConstraintMatrix pooled_covariance(const std::vector<SampleCovariance>& covs);
ConstraintMatrix pooled_covariance(const std::vector<UnitRecord>& units);

// ---------------------------------------------------------------------------
// Fit-ready view of a dataset.

/// Everything the likelihood needs, laid out for fast per-unit loops.
/// `cov[i]` serves both as S_i and as the plug-in estimate of Sigma_i.
struct MediationData {
  MatrixXd design;           // n x (q+1), row i = (X_i, W_i)
  VectorXd outcome;          // n
  std::vector<MatrixXd> cov; // n matrices, p x p
  VectorXd weight;           // T_i

  Index n() const { return outcome.size(); }
  Index p() const { return cov.empty() ? 0 : cov.front().rows(); }
  Index design_dim() const { return design.cols(); }

  /// `drop_confounders` keeps only the exposure column (a misspecified fit).
  static MediationData from_units(const std::vector<UnitRecord>& units,
                                  bool drop_confounders = false);

  /// Units selected by index, repeats allowed.
  MediationData resample(const std::vector<Index>& rows) const;

  /// Same units with covariances expressed in an orthonormal basis Q (Q^T S_i Q).
  MediationData reduced(const MatrixXd& basis) const;

  /// T-weighted mean of the covariances.
  MatrixXd pooled() const;
};

}  // namespace gmed
