#pragma once

#include "gmed/data_model.hpp"
#include "gmed/likelihood.hpp"
#include "gmed/parallel.hpp"

#include "gmed/error.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

namespace gmed::testing {

inline VectorXd gaussian_vector(Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = z(rng);
  return v;
}

inline MatrixXd gaussian_matrix(Index r, Index c, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  MatrixXd m(r, c);
  for (Index j = 0; j < c; ++j) {
    for (Index i = 0; i < r; ++i) m(i, j) = z(rng);
  }
  return m;
}

inline MatrixXd random_spd(Index p, Rng& rng) {
  const MatrixXd G = gaussian_matrix(p, p, rng);
  return G * G.transpose() + 0.5 * MatrixXd::Identity(p, p);
}

/// Units with Gaussian mediators of random covariance, binary exposure and
/// Gaussian confounders and outcome.
inline std::vector<UnitRecord> random_units(int n, int p, int q, int T, Rng& rng) {
  std::vector<UnitRecord> units;
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    UnitRecord u;
    u.unit_id = "u" + std::to_string(i);
    u.exposure = coin(rng) ? 1.0 : 0.0;
    u.confounders = gaussian_vector(q, rng);
    u.outcome = z(rng);
    const MatrixXd L = random_spd(p, rng).llt().matrixL();
    u.mediator = gaussian_matrix(T, p, rng) * L.transpose();
    units.push_back(std::move(u));
  }
  // Both exposure levels must be present for a full-rank design.
  units[0].exposure = 0.0;
  units[1].exposure = 1.0;
  return units;
}

/// A feasible state with moderate values in every parameter.
inline ModelParameters random_params(const MediationData& data, const ConstraintMatrix& H, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  ModelParameters params;
  params.theta = ProjectionVector::normalized(gaussian_vector(data.p(), rng), H);
  const VectorXd quad = projected_variances(params.theta.vec(), data);
  params.alpha0i = quad.array().log().matrix() + gaussian_vector(data.n(), rng, 0.3);
  params.alpha0 = params.alpha0i.mean() + u(rng);
  params.alpha_block = gaussian_vector(data.design_dim(), rng, 0.3);
  params.gamma0 = u(rng);
  params.gamma_block = gaussian_vector(data.design_dim(), rng, 0.5);
  params.beta = 2.0 * u(rng);
  params.pi2 = 0.2 + std::abs(u(rng));
  params.sigma2 = 0.5 + std::abs(u(rng));
  return params;
}

/// Code of the Error thrown by fn, or nothing when fn returns normally.
inline std::optional<ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gmed_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace gmed::testing
