#include "gmed/simulate.hpp"

#include "csv.hpp"
#include "gmed/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace gmed {

namespace {

constexpr int kMaxRejections = 10000;

double median(std::vector<double> x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(x.begin(), x.end());
  const std::size_t m = x.size() / 2;
  return x.size() % 2 ? x[m] : 0.5 * (x[m - 1] + x[m]);
}

double mean(const std::vector<double>& x) {
  if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sd(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

bool is_mediation_dim(const SimulationDesign& d, int j) {
  return std::find(d.mediation_dims.begin(), d.mediation_dims.end(), j) != d.mediation_dims.end();
}

}  // namespace

SimulationDesign SimulationDesign::case1(int p, int n, int T) {
  SimulationDesign d;
  d.p = p;
  d.n = n;
  d.T = T;
  return d;
}

SimulationDesign SimulationDesign::case2(int p, int n, int T) {
  SimulationDesign d = case1(p, n, T);
  d.q = 2;
  return d;
}

void SimulationDesign::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); };
  if (p < 1) fail("p must be at least 1");
  if (n < 2) fail("n must be at least 2");
  if (T < 1) fail("T must be at least 1");
  if (q != 0 && q != 2) fail("q must be 0 or 2");
  if (!(error_sd >= 0.0) || !(eig_sd >= 0.0)) fail("standard deviations must be non-negative");
  if (!std::isfinite(coef_magnitude) || !std::isfinite(confounder_coef)) fail("coefficients must be finite");
  if (!std::isfinite(log_eig_mean_hi) || !std::isfinite(log_eig_mean_lo)) fail("eigenvalue means must be finite");
  std::set<int> seen;
  for (int j : mediation_dims) {
    if (j < 1 || j > p) fail("mediation dimension " + std::to_string(j) + " outside 1.." + std::to_string(p));
    if (!seen.insert(j).second) fail("mediation dimension " + std::to_string(j) + " listed twice");
  }
  if (scale == EigenScale::Raw) {
    const int count = p - static_cast<int>(mediation_dims.size());
    for (int i = 0; i < count; ++i) {
      // Rejection sampling would effectively never terminate.
      if (eigen_mean(*this, i, count) + 4.0 * eig_sd <= 0.0) fail("raw-scale eigenvalue mean too far below zero");
    }
  }
}

double eigen_mean(const SimulationDesign& design, int i, int count) {
  if (count <= 1) return design.log_eig_mean_hi;
  const double frac = static_cast<double>(i) / static_cast<double>(count - 1);
  return design.log_eig_mean_hi + frac * (design.log_eig_mean_lo - design.log_eig_mean_hi);
}

MatrixXd random_orthonormal(int p, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd G(p, p);
  for (Index c = 0; c < p; ++c) {
    for (Index r = 0; r < p; ++r) G(r, c) = normal(rng);
  }
  Eigen::HouseholderQR<MatrixXd> qr(G);
  MatrixXd Q = qr.householderQ();
  const MatrixXd& R = qr.matrixQR();
  for (Index j = 0; j < p; ++j) {
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  }
  return Q;
}

SimulatedDataset generate_dataset(const SimulationDesign& design) {
  Rng rng = make_stream(design.seed, 0);
  return generate_dataset(design, rng);
}

SimulatedDataset generate_dataset(const SimulationDesign& design, Rng& rng) {
  design.validate();
  const int p = design.p;
  const double c = design.coef_magnitude;

  SimulatedDataset out;
  GroundTruth& truth = out.truth;
  truth.Pi = random_orthonormal(p, rng);
  truth.mediation_dims = design.mediation_dims;
  truth.alpha0 = truth.alpha = truth.gamma0 = truth.gamma = truth.beta = c;
  truth.phi1 = VectorXd::Constant(design.q, design.confounder_coef);
  truth.phi2 = VectorXd::Constant(design.q, design.confounder_coef);
  truth.aie = truth.alpha * truth.beta;
  truth.ade = truth.gamma;

  const int n_other = p - static_cast<int>(design.mediation_dims.size());
  std::vector<double> means;
  for (int i = 0; i < n_other; ++i) means.push_back(eigen_mean(design, i, n_other));

  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  out.units.reserve(static_cast<std::size_t>(design.n));
  const int width = std::max(1, static_cast<int>(std::to_string(design.n).size()));

  for (int i = 0; i < design.n; ++i) {
    UnitRecord u;
    std::string id = std::to_string(i + 1);
    u.unit_id = "u" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
    u.exposure = coin(rng) ? 1.0 : 0.0;
    u.confounders = VectorXd::Zero(design.q);
    if (design.q == 2) {
      u.confounders(0) = 0.5 * normal(rng);
      u.confounders(1) = coin(rng) ? 1.0 : 0.0;
    }

    VectorXd log_lambda(p);
    double mediated = 0.0;
    const double shift = truth.phi1.size() ? u.confounders.dot(truth.phi1) : 0.0;
    int other = 0;
    for (int j = 1; j <= p; ++j) {
      if (is_mediation_dim(design, j)) {
        const double eta = design.error_sd * normal(rng);
        log_lambda(j - 1) = truth.alpha0 + truth.alpha * u.exposure + shift + eta;
        mediated += truth.beta * log_lambda(j - 1);
        continue;
      }
      const double m = means[static_cast<std::size_t>(other++)];
      if (design.scale == EigenScale::Log) {
        log_lambda(j - 1) = m + design.eig_sd * normal(rng);
      } else {
        double lambda = -1.0;
        for (int tries = 0; tries < kMaxRejections && !(lambda > 0.0); ++tries) lambda = m + design.eig_sd * normal(rng);
        if (!(lambda > 0.0)) throw Error(ErrorCode::InvalidArgument, "raw-scale eigenvalue rejection failed");
        log_lambda(j - 1) = std::log(lambda);
      }
    }
    const double confounded = truth.phi2.size() ? u.confounders.dot(truth.phi2) : 0.0;
    u.outcome = truth.gamma0 + truth.gamma * u.exposure + mediated + confounded + design.error_sd * normal(rng);

    // Rows z' Lambda^{1/2} Pi' have covariance Pi Lambda Pi'.
    const MatrixXd loading = (log_lambda.array() / 2.0).exp().matrix().asDiagonal() * truth.Pi.transpose();
    MatrixXd Z(design.T, p);
    for (Index r = 0; r < design.T; ++r) {
      for (Index col = 0; col < p; ++col) Z(r, col) = normal(rng);
    }
    u.mediator = Z * loading;
    out.units.push_back(std::move(u));
  }
  return out;
}

double similarity(const VectorXd& theta_hat, const VectorXd& pi_j) {
  const double denom = theta_hat.norm() * pi_j.norm();
  if (!(denom > 0.0)) return 0.0;
  return std::min(1.0, std::abs(theta_hat.dot(pi_j)) / denom);
}

std::vector<int> match_components(const MatrixXd& thetas, const MatrixXd& Pi, const std::vector<int>& dims) {
  std::vector<int> matched(dims.size(), -1);
  std::vector<bool> used(static_cast<std::size_t>(thetas.cols()), false);
  for (std::size_t round = 0; round < dims.size(); ++round) {
    double best = -1.0;
    int best_d = -1;
    int best_k = -1;
    for (std::size_t d = 0; d < dims.size(); ++d) {
      if (matched[d] >= 0) continue;
      for (Index k = 0; k < thetas.cols(); ++k) {
        if (used[static_cast<std::size_t>(k)]) continue;
        const double s = similarity(thetas.col(k), Pi.col(dims[d] - 1));
        if (s > best) {
          best = s;
          best_d = static_cast<int>(d);
          best_k = static_cast<int>(k);
        }
      }
    }
    if (best_d < 0) break;
    matched[static_cast<std::size_t>(best_d)] = best_k;
    used[static_cast<std::size_t>(best_k)] = true;
  }
  return matched;
}

ReplicationResult replication_study(const SimulationDesign& design, int n_reps, const MethodConfig& method) {
  design.validate();
  if (n_reps < 1) throw Error(ErrorCode::InvalidArgument, "n_reps must be at least 1");
  if (method.threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be positive");
  method.optimizer.validate();

  ReplicationResult result;
  result.design = design;
  result.n_reps = n_reps;
  result.records.resize(static_cast<std::size_t>(n_reps));
  const auto& dims = design.mediation_dims;

  parallel_for(result.records.size(), method.threads, [&](std::size_t r) {
    ReplicateRecord& rec = result.records[r];
    rec.replicate = static_cast<int>(r);
    rec.matched.assign(dims.size(), -1);
    rec.similarity.assign(dims.size(), 0.0);
    rec.aie.assign(dims.size(), 0.0);

    Rng rng = make_stream(design.seed, r);
    const SimulatedDataset sim = generate_dataset(design, rng);
    OptimizerConfig opt = method.optimizer;
    opt.seed = rng();
    try {
      const MediationData data = MediationData::from_units(sim.units, method.misspecify);
      const ConstraintMatrix H = method.h == ConstraintKind::Identity
                                     ? ConstraintMatrix::identity(data.p())
                                     : ConstraintMatrix(data.pooled(), ConstraintKind::PooledCovariance);
      const ComponentSet set = select_components(data, H, opt, std::min(method.max_k, design.p), method.dfd_threshold);
      rec.n_components = static_cast<int>(set.size());
      for (const auto& f : set.fits) {
        rec.worst_relative_ascent = std::max(rec.worst_relative_ascent, f.trace.worst_relative_ascent);
      }
      rec.matched = match_components(set.thetas(), sim.truth.Pi, dims);
      for (std::size_t d = 0; d < dims.size(); ++d) {
        const int k = rec.matched[d];
        if (k < 0) continue;
        rec.similarity[d] = similarity(set.fits[static_cast<std::size_t>(k)].params.theta.vec(),
                                       sim.truth.Pi.col(dims[d] - 1));
        rec.aie[d] = set.fits[static_cast<std::size_t>(k)].estimates.aie;
      }
    } catch (const Error& e) {
      if (e.category() != ErrorCategory::Numerical) throw;
      rec.failed = true;
      rec.error = e.what();
    }
  });

  const double true_aie = design.coef_magnitude * design.coef_magnitude;
  for (std::size_t d = 0; d < dims.size(); ++d) {
    DimMetrics m;
    m.dim = dims[d];
    std::vector<double> sims, errs, abs_errs, sq_errs;
    for (const auto& rec : result.records) {
      if (rec.failed) continue;
      if (rec.matched[d] >= 0) ++m.n_matched;
      sims.push_back(rec.similarity[d]);
      const double e = rec.aie[d] - true_aie;
      errs.push_back(e);
      abs_errs.push_back(std::abs(e));
      sq_errs.push_back(e * e);
    }
    m.mean_similarity = mean(sims);
    m.se_similarity = sd(sims);
    m.median_similarity = median(sims);
    m.bias = mean(errs);
    m.mse = mean(sq_errs);
    m.median_abs_bias = median(abs_errs);
    m.median_sq_error = median(sq_errs);
    result.metrics.push_back(m);
  }
  for (const auto& rec : result.records) {
    if (rec.failed) ++result.n_failed;
    result.worst_relative_ascent = std::max(result.worst_relative_ascent, rec.worst_relative_ascent);
  }
  return result;
}

std::string metrics_csv(const ReplicationResult& result) {
  std::ostringstream os;
  const auto& d = result.design;
  os << "sim,p,n,T,dim,mean_similarity,se_similarity,median_similarity,bias,mse,median_abs_bias,"
        "median_sq_error,n_matched,n_reps,n_failed\n";
  for (const auto& m : result.metrics) {
    os << (d.q == 0 ? 1 : 2) << ',' << d.p << ',' << d.n << ',' << d.T << ",D" << m.dim << ','
       << csv::format_real(m.mean_similarity) << ',' << csv::format_real(m.se_similarity) << ','
       << csv::format_real(m.median_similarity) << ',' << csv::format_real(m.bias) << ','
       << csv::format_real(m.mse) << ',' << csv::format_real(m.median_abs_bias) << ','
       << csv::format_real(m.median_sq_error) << ',' << m.n_matched << ',' << result.n_reps << ','
       << result.n_failed << '\n';
  }
  return os.str();
}

}  // namespace gmed
