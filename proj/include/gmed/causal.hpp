#pragma once

// Causal estimands of a fitted component and the fixed-theta unit bootstrap.

#include "gmed/data_model.hpp"
#include "gmed/optimizer.hpp"

#include <array>
#include <string>
#include <utility>
#include <vector>

namespace gmed {

/// aie = alpha * beta, ade = gamma, ate = aie + ade.
CausalEstimates estimands(double alpha, double beta, double gamma);

/// Empirical quantiles at (1 - level)/2 and (1 + level)/2, interpolating
/// linearly between order statistics. Throws TooFewDraws for < 2 draws.
std::pair<double, double> percentile_ci(std::vector<double> draws, double level);

/// min(1, 2 min(#{d <= 0}, #{d >= 0}) / B). Throws TooFewDraws for < 2 draws.
double bootstrap_p_value(const std::vector<double>& draws);

// Quantities tracked per replicate, in this order.
enum class Estimand { Alpha, Beta, Gamma, Aie, Ade, Ate };
inline constexpr std::size_t kNumEstimands = 6;
const char* to_string(Estimand e) noexcept;

struct EstimandSummary {
  double estimate = 0.0;  // full-data fixed-theta fit
  double se = 0.0;        // replicate standard deviation
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 0.0;
};

struct ComponentBootstrap {
  ProjectionVector theta;
  std::array<EstimandSummary, kNumEstimands> summary;
  // One row per successful replicate, columns in Estimand order.
  std::vector<std::array<double, kNumEstimands>> draws;

  const EstimandSummary& operator[](Estimand e) const { return summary[static_cast<std::size_t>(e)]; }
};

struct BootstrapConfig {
  int B = 500;
  double ci_level = 0.95;
  std::uint64_t seed = 0;
  int threads = 1;
  OptimizerConfig optimizer;

  /// Throws Error(InvalidArgument) for B < 1 or a level outside (0, 1).
  void validate() const;
};

struct BootstrapResult {
  int B = 0;
  double ci_level = 0.0;
  int n_failed = 0;  // replicates excluded from every component
  std::vector<ComponentBootstrap> components;
  std::vector<std::string> warnings;
};

/// Fixed-theta refit of every component on the full data, in order; outcome
/// deflation uses the refitted betas of the earlier components.
std::vector<ComponentFit> refit_components(const MediationData& data, const std::vector<ProjectionVector>& thetas,
                                           const OptimizerConfig& config = {});

/// Resamples units with replacement B times and refits every component with
/// its theta held fixed. A replicate in which any component fails (degenerate
/// design, non-convergence) is dropped and counted in n_failed. Replicate r
/// draws from its own stream, so the output does not depend on `threads`.
/// With fewer than two surviving replicates the CI and p-value fields are NaN.
BootstrapResult bootstrap(const MediationData& data, const std::vector<ProjectionVector>& thetas,
                          const BootstrapConfig& config);

}  // namespace gmed
