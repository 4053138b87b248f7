#include "gmed/causal.hpp"

#include "gmed/components.hpp"
#include "gmed/error.hpp"
#include "gmed/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <tuple>

namespace gmed {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::array<double, kNumEstimands> row_of(const ComponentFit& fit) {
  const auto& e = fit.estimates;
  return {fit.params.alpha(), fit.params.beta, fit.params.gamma(), e.aie, e.ade, e.ate};
}

double sample_sd(const std::vector<double>& x) {
  if (x.size() < 2) return kNaN;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

bool is_numerical_failure(const Error& e) { return e.category() == ErrorCategory::Numerical; }

}  // namespace

CausalEstimates estimands(double alpha, double beta, double gamma) {
  CausalEstimates out;
  out.aie = alpha * beta;
  out.ade = gamma;
  out.ate = out.aie + out.ade;
  return out;
}

std::pair<double, double> percentile_ci(std::vector<double> draws, double level) {
  if (draws.size() < 2) throw Error(ErrorCode::TooFewDraws, "percentile interval needs at least 2 draws");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must lie in (0, 1)");
  std::sort(draws.begin(), draws.end());
  auto quantile = [&](double prob) {
    const double h = (static_cast<double>(draws.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, draws.size() - 1);
    return draws[lo] + (h - static_cast<double>(lo)) * (draws[hi] - draws[lo]);
  };
  const double tail = (1.0 - level) / 2.0;
  return {quantile(tail), quantile(1.0 - tail)};
}

double bootstrap_p_value(const std::vector<double>& draws) {
  if (draws.size() < 2) throw Error(ErrorCode::TooFewDraws, "p-value needs at least 2 draws");
  std::size_t at_most = 0;
  std::size_t at_least = 0;
  for (double d : draws) {
    if (d <= 0.0) ++at_most;
    if (d >= 0.0) ++at_least;
  }
  const double p = 2.0 * static_cast<double>(std::min(at_most, at_least)) / static_cast<double>(draws.size());
  return std::min(1.0, p);
}

const char* to_string(Estimand e) noexcept {
  switch (e) {
    case Estimand::Alpha: return "alpha";
    case Estimand::Beta: return "beta";
    case Estimand::Gamma: return "gamma";
    case Estimand::Aie: return "aie";
    case Estimand::Ade: return "ade";
    case Estimand::Ate: return "ate";
  }
  return "?";
}

void BootstrapConfig::validate() const {
  if (B < 1) throw Error(ErrorCode::InvalidArgument, "B must be at least 1");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw Error(ErrorCode::InvalidArgument, "ci level must lie in (0, 1)");
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be positive");
}

std::vector<ComponentFit> refit_components(const MediationData& data, const std::vector<ProjectionVector>& thetas,
                                           const OptimizerConfig& config) {
  std::vector<ComponentFit> fits;
  fits.reserve(thetas.size());
  MediationData work = data;
  for (const auto& theta : thetas) {
    ComponentFit fit = refit_fixed_theta(theta, work, config);
    // Remove this component's mediation term before fitting the next one.
    const VectorXd quad = projected_variances(theta.vec(), work);
    work.outcome -= fit.params.beta * quad.array().log().matrix();
    fits.push_back(std::move(fit));
  }
  return fits;
}

BootstrapResult bootstrap(const MediationData& data, const std::vector<ProjectionVector>& thetas,
                          const BootstrapConfig& config) {
  config.validate();
  if (thetas.empty()) throw Error(ErrorCode::InvalidArgument, "no components to bootstrap");
  for (const auto& t : thetas) {
    if (t.dim() != data.p()) throw Error(ErrorCode::DimensionMismatch, "theta length differs from mediator dimension");
  }

  const auto point = refit_components(data, thetas, config.optimizer);

  using Row = std::array<double, kNumEstimands>;
  std::vector<std::optional<std::vector<Row>>> reps(static_cast<std::size_t>(config.B));
  const Index n = data.n();
  parallel_for(reps.size(), config.threads, [&](std::size_t r) {
    Rng rng = make_stream(config.seed, r);
    std::uniform_int_distribution<Index> pick(0, n - 1);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (auto& i : rows) i = pick(rng);
    const MediationData sample = data.resample(rows);
    try {
      const auto fits = refit_components(sample, thetas, config.optimizer);
      std::vector<Row> out;
      for (const auto& f : fits) {
        if (!f.trace.converged) return;
        out.push_back(row_of(f));
      }
      reps[r] = std::move(out);
    } catch (const Error& e) {
      if (!is_numerical_failure(e)) throw;
    }
  });

  BootstrapResult result;
  result.B = config.B;
  result.ci_level = config.ci_level;
  for (const auto& r : reps) {
    if (!r) ++result.n_failed;
  }
  for (std::size_t j = 0; j < thetas.size(); ++j) {
    ComponentBootstrap comp;
    comp.theta = thetas[j];
    for (const auto& r : reps) {
      if (r) comp.draws.push_back((*r)[j]);
    }
    const Row est = row_of(point[j]);
    for (std::size_t e = 0; e < kNumEstimands; ++e) {
      std::vector<double> col;
      col.reserve(comp.draws.size());
      for (const auto& d : comp.draws) col.push_back(d[e]);
      EstimandSummary& s = comp.summary[e];
      s.estimate = est[e];
      s.se = sample_sd(col);
      if (col.size() >= 2) {
        std::tie(s.ci_lo, s.ci_hi) = percentile_ci(col, config.ci_level);
        s.p_value = bootstrap_p_value(col);
      } else {
        s.ci_lo = s.ci_hi = s.p_value = kNaN;
      }
    }
    result.components.push_back(std::move(comp));
  }
  if (result.n_failed * 100 > result.B) {
    std::ostringstream msg;
    msg << result.n_failed << " of " << result.B << " bootstrap replicates failed and were excluded";
    result.warnings.push_back(msg.str());
  }
  return result;
}

}  // namespace gmed
