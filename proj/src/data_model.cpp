#include "gmed/data_model.hpp"

#include "csv.hpp"
#include "gmed/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

namespace fs = std::filesystem;

namespace gmed {

VectorXd design_vector(const UnitRecord& unit) {
  VectorXd x(unit.confounders.size() + 1);
  x(0) = unit.exposure;
  x.tail(unit.confounders.size()) = unit.confounders;
  return x;
}

const char* to_string(ConstraintKind kind) noexcept {
  return kind == ConstraintKind::Identity ? "identity" : "pooled";
}

ConstraintKind parse_constraint_kind(const std::string& text) {
  if (text == "identity") return ConstraintKind::Identity;
  if (text == "pooled") return ConstraintKind::PooledCovariance;
  throw Error(ErrorCode::InvalidArgument, "unknown constraint kind '" + text + "'");
}

// ---------------------------------------------------------------------------

ConstraintMatrix::ConstraintMatrix(MatrixXd H, ConstraintKind kind) : kind_(kind) {
  if (H.rows() == 0 || H.rows() != H.cols()) {
    throw Error(ErrorCode::SingularPooledCovariance, "constraint matrix must be square and non-empty");
  }
  const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  if ((H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorCode::SingularPooledCovariance, "constraint matrix is not symmetric");
  }
  H_ = 0.5 * (H + H.transpose());

  Eigen::LLT<MatrixXd> llt(H_);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(H_);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (llt.info() != Eigen::Success || !(lo > 1e-12 * hi) || !(hi > 0.0)) {
    throw Error(ErrorCode::SingularPooledCovariance,
                "constraint matrix is not positive definite (smallest eigenvalue " +
                    csv::format_real(lo) + ")");
  }
  const VectorXd inv_root = eig.eigenvalues().cwiseSqrt().cwiseInverse();
  inv_sqrt_ = eig.eigenvectors() * inv_root.asDiagonal() * eig.eigenvectors().transpose();
  inv_sqrt_ = 0.5 * (inv_sqrt_ + inv_sqrt_.transpose()).eval();
}

ConstraintMatrix ConstraintMatrix::identity(Index p) {
  return ConstraintMatrix(MatrixXd::Identity(p, p), ConstraintKind::Identity);
}

ConstraintMatrix ConstraintMatrix::restricted(const MatrixXd& basis) const {
  if (kind_ == ConstraintKind::Identity) return identity(basis.cols());
  return ConstraintMatrix(basis.transpose() * H_ * basis, kind_);
}

void apply_sign_convention(VectorXd& v) {
  Index best = 0;
  double best_abs = -1.0;
  for (Index j = 0; j < v.size(); ++j) {
    if (std::abs(v(j)) > best_abs) {
      best_abs = std::abs(v(j));
      best = j;
    }
  }
  if (v.size() > 0 && v(best) < 0.0) v = -v;
}

ProjectionVector ProjectionVector::normalized(VectorXd v, const ConstraintMatrix& H) {
  if (v.size() != H.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "projection vector length differs from constraint dimension");
  }
  const double q = H.quad(v);
  if (!(q > 0.0) || !std::isfinite(q)) {
    throw Error(ErrorCode::InvalidArgument, "cannot normalize a zero or non-finite projection vector");
  }
  v /= std::sqrt(q);
  apply_sign_convention(v);
  return ProjectionVector(std::move(v));
}

ProjectionVector ProjectionVector::from_normalized(VectorXd v) {
  apply_sign_convention(v);
  return ProjectionVector(std::move(v));
}

bool ProjectionVector::satisfies(const ConstraintMatrix& H, double tol) const {
  return theta_.size() == H.dim() && std::abs(H.quad(theta_) - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

struct SubjectRow {
  std::string unit_id;
  double exposure;
  double outcome;
  VectorXd confounders;
};

std::vector<SubjectRow> read_subjects(const fs::path& path) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::MalformedInput, "subject table not found: " + path.string());
  }
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw Error(ErrorCode::MalformedInput, "empty subject table " + path.string());

  const auto header = csv::split_line(lines.front());
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw Error(ErrorCode::MalformedInput, "subject table lacks column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column("unit_id");
  const std::size_t x_col = column("exposure");
  const std::size_t y_col = column("outcome");
  std::vector<std::size_t> w_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != id_col && c != x_col && c != y_col) w_cols.push_back(c);
  }

  std::vector<SubjectRow> rows;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = csv::split_line(lines[r]);
    const std::string where = path.filename().string() + " line " + std::to_string(r + 1);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::MalformedInput, "wrong number of fields at " + where);
    }
    SubjectRow row;
    row.unit_id = fields[id_col];
    row.exposure = csv::parse_real(fields[x_col], where);
    row.outcome = csv::parse_real(fields[y_col], where);
    row.confounders.resize(static_cast<Index>(w_cols.size()));
    for (std::size_t k = 0; k < w_cols.size(); ++k) {
      row.confounders(static_cast<Index>(k)) = csv::parse_real(fields[w_cols[k]], where);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd rows_to_matrix(const std::vector<std::vector<double>>& rows) {
  MatrixXd m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (std::size_t j = 0; j < rows[t].size(); ++j) m(static_cast<Index>(t), static_cast<Index>(j)) = rows[t][j];
  }
  return m;
}

// Checks the row width against the dimension fixed by earlier rows/units.
void check_width(std::size_t width, Index& p, const std::string& where) {
  if (p < 0) {
    p = static_cast<Index>(width);
    return;
  }
  if (static_cast<Index>(width) != p) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(p) + " mediator values, found " +
                                                  std::to_string(width) + " at " + where);
  }
}

MatrixXd read_unit_file(const fs::path& path, Index& p) {
  const auto lines = csv::read_lines(path);
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto fields = csv::split_line(lines[r]);
    const std::string where = path.filename().string() + " line " + std::to_string(r + 1);
    check_width(fields.size(), p, where);
    std::vector<double> values;
    values.reserve(fields.size());
    for (const auto& f : fields) values.push_back(csv::parse_real(f, where));
    rows.push_back(std::move(values));
  }
  return rows_to_matrix(rows);
}

std::unordered_map<std::string, MatrixXd> read_long_table(const fs::path& path, Index& p) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw Error(ErrorCode::MalformedInput, "empty mediator table " + path.string());
  const auto header = csv::split_line(lines.front());
  if (header.size() < 3 || header[0] != "unit_id" || header[1] != "t") {
    throw Error(ErrorCode::MalformedInput, "long mediator table must start with unit_id,t,v1..");
  }
  std::unordered_map<std::string, std::map<double, std::vector<double>>> grouped;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = csv::split_line(lines[r]);
    const std::string where = path.filename().string() + " line " + std::to_string(r + 1);
    if (fields.size() < 2) throw Error(ErrorCode::MalformedInput, "truncated row at " + where);
    check_width(fields.size() - 2, p, where);
    const double t = csv::parse_real(fields[1], where);
    std::vector<double> values;
    for (std::size_t c = 2; c < fields.size(); ++c) values.push_back(csv::parse_real(fields[c], where));
    auto& unit = grouped[fields[0]];
    if (!unit.emplace(t, std::move(values)).second) {
      throw Error(ErrorCode::MalformedInput, "duplicate time index at " + where);
    }
  }
  std::unordered_map<std::string, MatrixXd> out;
  for (auto& [id, by_t] : grouped) {
    std::vector<std::vector<double>> rows;
    for (auto& [t, values] : by_t) rows.push_back(std::move(values));
    out.emplace(id, rows_to_matrix(rows));
  }
  return out;
}

}  // namespace

std::vector<UnitRecord> load_dataset(const fs::path& subjects, const fs::path& mediators,
                                     const IngestOptions& options) {
  auto rows = read_subjects(subjects);
  if (!fs::exists(mediators)) {
    throw Error(ErrorCode::MalformedInput, "mediator source not found: " + mediators.string());
  }

  Index p = -1;
  std::vector<UnitRecord> units;
  units.reserve(rows.size());

  std::unordered_map<std::string, MatrixXd> long_table;
  const bool per_unit = fs::is_directory(mediators);
  if (!per_unit) long_table = read_long_table(mediators, p);

  for (auto& row : rows) {
    UnitRecord unit;
    unit.unit_id = row.unit_id;
    unit.exposure = row.exposure;
    unit.outcome = row.outcome;
    unit.confounders = std::move(row.confounders);
    if (per_unit) {
      const fs::path file = mediators / (row.unit_id + ".csv");
      if (!fs::exists(file)) throw Error(ErrorCode::MissingMediator, row.unit_id);
      unit.mediator = read_unit_file(file, p);
    } else {
      auto it = long_table.find(row.unit_id);
      if (it == long_table.end()) throw Error(ErrorCode::MissingMediator, row.unit_id);
      unit.mediator = std::move(it->second);
    }
    if (options.center && unit.mediator.rows() > 0) {
      unit.mediator.rowwise() -= unit.mediator.colwise().mean();
    }
    units.push_back(std::move(unit));
  }
  validate_units(units);
  return units;
}

void validate_units(const std::vector<UnitRecord>& units) {
  if (units.empty()) throw Error(ErrorCode::MalformedInput, "dataset has no units");
  const Index p = units.front().dim();
  const Index q = units.front().confounders.size();
  for (const auto& u : units) {
    if (u.n_obs() < 1) throw Error(ErrorCode::MalformedInput, "unit " + u.unit_id + " has no mediator rows");
    if (u.dim() != p) {
      throw Error(ErrorCode::DimensionMismatch, "unit " + u.unit_id + ": expected p=" + std::to_string(p) +
                                                    ", found " + std::to_string(u.dim()));
    }
    if (u.confounders.size() != q) {
      throw Error(ErrorCode::DimensionMismatch, "unit " + u.unit_id + ": expected q=" + std::to_string(q) +
                                                    ", found " + std::to_string(u.confounders.size()));
    }
    if (!std::isfinite(u.exposure) || !std::isfinite(u.outcome) || !u.confounders.allFinite()) {
      throw Error(ErrorCode::NonFiniteValue, "subject row of unit " + u.unit_id);
    }
    if (!u.mediator.allFinite()) throw Error(ErrorCode::NonFiniteValue, "mediator matrix of unit " + u.unit_id);
  }
}

void write_dataset(const std::vector<UnitRecord>& units, const fs::path& subjects, const fs::path& mediators,
                   MediatorLayout layout) {
  validate_units(units);
  const Index q = units.front().confounders.size();
  {
    std::ofstream out(subjects);
    if (!out) throw Error(ErrorCode::MalformedInput, "cannot write " + subjects.string());
    out << "unit_id,exposure,outcome";
    for (Index k = 0; k < q; ++k) out << ",w" << (k + 1);
    out << '\n';
    for (const auto& u : units) {
      out << u.unit_id << ',' << csv::format_real(u.exposure) << ',' << csv::format_real(u.outcome);
      for (Index k = 0; k < q; ++k) out << ',' << csv::format_real(u.confounders(k));
      out << '\n';
    }
  }

  auto write_row = [](std::ostream& out, const MatrixXd& m, Index t) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << csv::format_real(m(t, j));
    }
    out << '\n';
  };

  if (layout == MediatorLayout::PerUnitDirectory) {
    fs::create_directories(mediators);
    for (const auto& u : units) {
      std::ofstream out(mediators / (u.unit_id + ".csv"));
      if (!out) throw Error(ErrorCode::MalformedInput, "cannot write mediator file for " + u.unit_id);
      for (Index t = 0; t < u.n_obs(); ++t) write_row(out, u.mediator, t);
    }
  } else {
    std::ofstream out(mediators);
    if (!out) throw Error(ErrorCode::MalformedInput, "cannot write " + mediators.string());
    out << "unit_id,t";
    for (Index j = 0; j < units.front().dim(); ++j) out << ",v" << (j + 1);
    out << '\n';
    for (const auto& u : units) {
      for (Index t = 0; t < u.n_obs(); ++t) {
        out << u.unit_id << ',' << (t + 1) << ',';
        write_row(out, u.mediator, t);
      }
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

MatrixXd second_moment(const MatrixXd& m) {
  MatrixXd S = MatrixXd::Zero(m.cols(), m.cols());
  S.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose());
  S.triangularView<Eigen::StrictlyUpper>() = S.transpose();
  S /= static_cast<double>(m.rows());
  return S;
}

}  // namespace

std::vector<SampleCovariance> sample_covariances(const std::vector<UnitRecord>& units) {
  std::vector<SampleCovariance> out;
  out.reserve(units.size());
  for (const auto& u : units) out.push_back({second_moment(u.mediator), static_cast<int>(u.n_obs())});
  return out;
}

ConstraintMatrix pooled_covariance(const std::vector<SampleCovariance>& covs) {
  if (covs.empty()) throw Error(ErrorCode::SingularPooledCovariance, "no units to pool");
  MatrixXd sum = MatrixXd::Zero(covs.front().S.rows(), covs.front().S.cols());
  double total = 0.0;
  for (const auto& c : covs) {
    sum += static_cast<double>(c.weight) * c.S;
    total += c.weight;
  }
  return ConstraintMatrix(sum / total, ConstraintKind::PooledCovariance);
}

ConstraintMatrix pooled_covariance(const std::vector<UnitRecord>& units) {
  return pooled_covariance(sample_covariances(units));
}

// ---------------------------------------------------------------------------

MediationData MediationData::from_units(const std::vector<UnitRecord>& units, bool drop_confounders) {
  validate_units(units);
  const Index n = static_cast<Index>(units.size());
  const Index m = drop_confounders ? 1 : units.front().confounders.size() + 1;
  MediationData data;
  data.design.resize(n, m);
  data.outcome.resize(n);
  data.weight.resize(n);
  data.cov.reserve(units.size());
  for (Index i = 0; i < n; ++i) {
    const auto& u = units[static_cast<std::size_t>(i)];
    data.design.row(i) = design_vector(u).head(m).transpose();
    data.outcome(i) = u.outcome;
    data.weight(i) = static_cast<double>(u.n_obs());
    data.cov.push_back(second_moment(u.mediator));
  }
  return data;
}

MediationData MediationData::resample(const std::vector<Index>& rows) const {
  MediationData out;
  const Index n = static_cast<Index>(rows.size());
  out.design.resize(n, design.cols());
  out.outcome.resize(n);
  out.weight.resize(n);
  out.cov.reserve(rows.size());
  for (Index k = 0; k < n; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    out.design.row(k) = design.row(i);
    out.outcome(k) = outcome(i);
    out.weight(k) = weight(i);
    out.cov.push_back(cov[static_cast<std::size_t>(i)]);
  }
  return out;
}

MediationData MediationData::reduced(const MatrixXd& basis) const {
  MediationData out;
  out.design = design;
  out.outcome = outcome;
  out.weight = weight;
  out.cov.reserve(cov.size());
  for (const auto& S : cov) {
    MatrixXd R = basis.transpose() * S * basis;
    out.cov.push_back(0.5 * (R + R.transpose()));
  }
  return out;
}

MatrixXd MediationData::pooled() const {
  MatrixXd sum = MatrixXd::Zero(p(), p());
  for (std::size_t i = 0; i < cov.size(); ++i) sum += weight(static_cast<Index>(i)) * cov[i];
  return sum / weight.sum();
}

}  // namespace gmed
