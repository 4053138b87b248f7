#pragma once

// Synthetic datasets with a common eigenbasis and planted mediation
// components, and the replication harness that scores fitted components
// against them.

#include "gmed/components.hpp"
#include "gmed/data_model.hpp"
#include "gmed/optimizer.hpp"
#include "gmed/parallel.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gmed {

// How non-mediation eigenvalues are drawn.
enum class EigenScale {
  Log,  // log(lambda) ~ N(m_j, sd^2)
  Raw,  // lambda ~ N(m_j, sd^2) truncated to lambda > 0 by rejection
};

struct SimulationDesign {
  int p = 10;
  int n = 500;
  int T = 100;
  std::vector<int> mediation_dims{2, 4};  // 1-based columns of Pi
  double coef_magnitude = 1.0;
  double error_sd = 0.1;
  int q = 0;  // 0 or 2 confounders
  double confounder_coef = 0.5;
  double log_eig_mean_hi = 3.0;
  double log_eig_mean_lo = -1.0;
  double eig_sd = 0.1;
  EigenScale scale = EigenScale::Log;
  std::uint64_t seed = 0;

  static SimulationDesign case1(int p, int n, int T);
  static SimulationDesign case2(int p, int n, int T);

  /// Throws Error(InvalidArgument) on an unusable design.
  void validate() const;
};

struct GroundTruth {
  MatrixXd Pi;  // columns pi_1..pi_p
  std::vector<int> mediation_dims;
  double alpha0 = 0.0;
  double alpha = 0.0;
  double gamma0 = 0.0;
  double gamma = 0.0;
  double beta = 0.0;
  VectorXd phi1;  // confounder effects on the mediation log-eigenvalues
  VectorXd phi2;  // confounder effects on the outcome
  double aie = 0.0;  // per mediation component
  double ade = 0.0;
};

struct SimulatedDataset {
  std::vector<UnitRecord> units;
  GroundTruth truth;
};

/// Orthonormalized standard-Gaussian matrix; R's diagonal is made positive so
/// the factorization, and hence the result, is unique.
MatrixXd random_orthonormal(int p, Rng& rng);

/// Uses make_stream(design.seed, 0).
SimulatedDataset generate_dataset(const SimulationDesign& design);
SimulatedDataset generate_dataset(const SimulationDesign& design, Rng& rng);

/// Mean of the i-th non-mediation log-eigenvalue, i = 0..count-1.
double eigen_mean(const SimulationDesign& design, int i, int count);

/// |<a, b>| / (|a| |b|).
double similarity(const VectorXd& theta_hat, const VectorXd& pi_j);

struct MethodConfig {
  OptimizerConfig optimizer;
  ConstraintKind h = ConstraintKind::PooledCovariance;
  int max_k = 4;
  double dfd_threshold = 2.0;
  bool misspecify = false;  // fit without the confounders
  int threads = 1;          // concurrent replicates
};

/// One fitted replicate scored against the truth, per planted dimension.
struct ReplicateRecord {
  int replicate = 0;
  int n_components = 0;
  std::vector<int> matched;        // fitted component index per planted dim, -1 if none
  std::vector<double> similarity;  // 0 when unmatched
  std::vector<double> aie;         // 0 when unmatched
  double worst_relative_ascent = 0.0;
  bool failed = false;
  std::string error;
};

struct DimMetrics {
  int dim = 0;  // 1-based
  double mean_similarity = 0.0;
  double se_similarity = 0.0;  // standard deviation across replicates
  double median_similarity = 0.0;
  double bias = 0.0;  // mean(aie_hat - aie)
  double mse = 0.0;
  double median_abs_bias = 0.0;
  double median_sq_error = 0.0;
  int n_matched = 0;
};

struct ReplicationResult {
  SimulationDesign design;
  int n_reps = 0;
  int n_failed = 0;
  std::vector<ReplicateRecord> records;
  std::vector<DimMetrics> metrics;
  double worst_relative_ascent = 0.0;
};

/// Greedy matching: repeatedly pair the (planted, fitted) couple with the
/// highest similarity among those still free.
std::vector<int> match_components(const MatrixXd& thetas, const MatrixXd& Pi, const std::vector<int>& dims);

/// Replicate r simulates from make_stream(design.seed, r) and fits with
/// optimizer seed derived from the same stream; results are independent of
/// the thread count. Failed replicates are recorded and left out of metrics.
ReplicationResult replication_study(const SimulationDesign& design, int n_reps, const MethodConfig& method);

/// Metrics CSV: one row per planted dimension.
std::string metrics_csv(const ReplicationResult& result);

}  // namespace gmed
