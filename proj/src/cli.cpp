#include "gmed/cli.hpp"

#include "CLI11.hpp"
#include "gmed/causal.hpp"
#include "gmed/components.hpp"
#include "gmed/data_model.hpp"
#include "gmed/error.hpp"
#include "gmed/optimizer.hpp"
#include "gmed/parallel.hpp"
#include "gmed/simulate.hpp"
#include "json.hpp"
#include "manifest.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

namespace gmed::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

struct CommonOptions {
  std::uint64_t seed = 0;
  int threads = 0;
  bool no_timing = false;
  std::string out_dir = ".";
};

struct OptimizerOptions {
  int random_starts = 10;
  bool no_eigvec_starts = false;
  int max_iter = 200;
  double tol = 1e-8;

  OptimizerConfig config(std::uint64_t seed, int threads) const {
    OptimizerConfig c;
    c.n_random_starts = random_starts;
    c.include_Sbar_eigvec_starts = !no_eigvec_starts;
    c.max_outer_iter = max_iter;
    c.tol_obj = tol;
    c.seed = seed;
    c.threads = threads;
    return c;
  }
};

json optimizer_json(const OptimizerConfig& c) {
  return {{"max_outer_iter", c.max_outer_iter},   {"tol_obj", c.tol_obj},
          {"newton_max_iter", c.newton_max_iter}, {"newton_tol", c.newton_tol},
          {"n_random_starts", c.n_random_starts}, {"include_Sbar_eigvec_starts", c.include_Sbar_eigvec_starts}};
}

OptimizerConfig optimizer_from_json(const json& j) {
  OptimizerConfig c;
  c.max_outer_iter = j.at("max_outer_iter").get<int>();
  c.tol_obj = j.at("tol_obj").get<double>();
  c.newton_max_iter = j.at("newton_max_iter").get<int>();
  c.newton_tol = j.at("newton_tol").get<double>();
  c.n_random_starts = j.at("n_random_starts").get<int>();
  c.include_Sbar_eigvec_starts = j.at("include_Sbar_eigvec_starts").get<bool>();
  return c;
}

json vec_json(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

VectorXd vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::MalformedInput, "cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MalformedInput, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedInput, path.string() + ": " + e.what());
  }
}

void finish_manifest(RunManifest& m, Clock::time_point start, bool no_timing) {
  if (!no_timing) m.runtime_seconds = std::chrono::duration<double>(Clock::now() - start).count();
}

json fit_json(const ComponentFit& fit, std::size_t index, double dfd_value) {
  const auto& p = fit.params;
  const Index m = p.alpha_block.size();
  json coef;
  coef["alpha0"] = p.alpha0;
  coef["alpha"] = p.alpha();
  coef["phi1"] = vec_json(p.alpha_block.tail(m - 1));
  coef["gamma0"] = p.gamma0;
  coef["gamma"] = p.gamma();
  coef["phi2"] = vec_json(p.gamma_block.tail(m - 1));
  coef["beta"] = p.beta;
  coef["pi2"] = p.pi2;
  coef["sigma2"] = p.sigma2;

  json trace;
  trace["converged"] = fit.trace.converged;
  trace["n_iter"] = fit.trace.n_iter;
  trace["chosen_start_index"] = fit.trace.chosen_start_index;
  trace["n_starts"] = fit.trace.n_starts;
  trace["n_failed_starts"] = fit.trace.n_failed_starts;
  trace["worst_relative_ascent"] = fit.trace.worst_relative_ascent;
  trace["objective"] = fit.trace.objective;

  json c;
  c["index"] = index + 1;
  c["theta"] = vec_json(p.theta.vec());
  c["coefficients"] = coef;
  c["estimates"] = {{"ate", fit.estimates.ate}, {"aie", fit.estimates.aie}, {"ade", fit.estimates.ade}};
  c["objective"] = fit.objective;
  c["dfd"] = dfd_value;
  c["trace"] = trace;
  return c;
}

ConstraintMatrix make_constraint(const std::string& h, const MediationData& data) {
  if (parse_constraint_kind(h) == ConstraintKind::Identity) return ConstraintMatrix::identity(data.p());
  return ConstraintMatrix(data.pooled(), ConstraintKind::PooledCovariance);
}

// ---------------------------------------------------------------------------

struct FitOptions {
  CommonOptions common;
  OptimizerOptions opt;
  std::string subjects;
  std::string mediators;
  int max_components = 4;
  double dfd_threshold = 2.0;
  std::string h = "pooled";
  bool center = false;
};

int cmd_fit(const FitOptions& o, std::ostream& out) {
  const auto start = Clock::now();
  const int threads = resolve_threads(o.common.threads);
  const OptimizerConfig opt = o.opt.config(o.common.seed, threads);
  opt.validate();
  parse_constraint_kind(o.h);

  RunManifest manifest;
  manifest.command = "fit";
  manifest.seed = o.common.seed;
  manifest.tool_version = tool_version();
  manifest.config = {{"subjects", o.subjects},
                     {"mediators", o.mediators},
                     {"center", o.center},
                     {"max_components", o.max_components},
                     {"dfd_threshold", o.dfd_threshold},
                     {"h", o.h},
                     {"optimizer", optimizer_json(opt)}};

  const auto units = load_dataset(o.subjects, o.mediators, IngestOptions{o.center});
  manifest.add_input("subjects", o.subjects);
  manifest.add_input("mediators", o.mediators);
  const MediationData data = MediationData::from_units(units);
  if (o.max_components < 1 || o.max_components > data.p()) {
    throw Error(ErrorCode::InvalidArgument, "--max-components must lie in [1, p]");
  }
  const ConstraintMatrix H = make_constraint(o.h, data);
  const ComponentSet set = select_components(data, H, opt, o.max_components, o.dfd_threshold);

  json result;
  result["n"] = data.n();
  result["p"] = data.p();
  result["q"] = data.design_dim() - 1;
  json comps = json::array();
  for (std::size_t k = 0; k < set.size(); ++k) comps.push_back(fit_json(set.fits[k], k, set.dfd_trace[k]));
  result["components"] = comps;
  result["dfd_trace"] = set.dfd_trace;
  result["rejected_dfd"] = set.rejected_dfd ? json(*set.rejected_dfd) : json(nullptr);
  finish_manifest(manifest, start, o.common.no_timing);

  json doc;
  doc["manifest"] = manifest.to_json();
  doc["result"] = result;
  const fs::path path = fs::path(o.common.out_dir) / "result.json";
  write_json(path, doc);
  out << "fit: " << set.size() << " component(s) written to " << path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct BootstrapOptions {
  CommonOptions common;
  std::string fit;
  std::string subjects;
  std::string mediators;
  int B = 500;
  double level = 0.95;
  bool keep_draws = false;
};

int cmd_bootstrap(const BootstrapOptions& o, std::ostream& out, std::ostream& err) {
  const auto start = Clock::now();
  BootstrapConfig cfg;
  cfg.B = o.B;
  cfg.ci_level = o.level;
  cfg.seed = o.common.seed;
  cfg.threads = resolve_threads(o.common.threads);
  cfg.validate();

  const json fit_doc = read_json(o.fit);
  std::vector<ProjectionVector> thetas;
  std::string subjects = o.subjects;
  std::string mediators = o.mediators;
  bool center = false;
  try {
    const json& fit_cfg = fit_doc.at("manifest").at("config");
    if (subjects.empty()) subjects = fit_cfg.at("subjects").get<std::string>();
    if (mediators.empty()) mediators = fit_cfg.at("mediators").get<std::string>();
    center = fit_cfg.at("center").get<bool>();
    cfg.optimizer = optimizer_from_json(fit_cfg.at("optimizer"));
    for (const auto& c : fit_doc.at("result").at("components")) {
      thetas.push_back(ProjectionVector::from_normalized(vec_from_json(c.at("theta"))));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedInput, o.fit + ": " + e.what());
  }
  cfg.optimizer.threads = 1;

  RunManifest manifest;
  manifest.command = "bootstrap";
  manifest.seed = o.common.seed;
  manifest.tool_version = tool_version();
  manifest.config = {{"fit", o.fit},   {"subjects", subjects},  {"mediators", mediators},      {"center", center},
                     {"B", o.B},       {"ci_level", o.level},   {"keep_draws", o.keep_draws},
                     {"optimizer", optimizer_json(cfg.optimizer)}};
  manifest.add_input("fit", o.fit);

  const auto units = load_dataset(subjects, mediators, IngestOptions{center});
  manifest.add_input("subjects", subjects);
  manifest.add_input("mediators", mediators);
  const MediationData data = MediationData::from_units(units);
  const BootstrapResult res = bootstrap(data, thetas, cfg);
  for (const auto& w : res.warnings) err << "warning: " << w << "\n";

  json result;
  result["B"] = res.B;
  result["ci_level"] = res.ci_level;
  result["n_failed"] = res.n_failed;
  result["warnings"] = res.warnings;
  json comps = json::array();
  for (std::size_t j = 0; j < res.components.size(); ++j) {
    const auto& c = res.components[j];
    json cj;
    cj["index"] = j + 1;
    cj["theta"] = vec_json(c.theta.vec());
    cj["n_draws"] = c.draws.size();
    json est;
    for (std::size_t e = 0; e < kNumEstimands; ++e) {
      const auto& s = c.summary[e];
      est[to_string(static_cast<Estimand>(e))] = {
          {"estimate", s.estimate}, {"se", s.se}, {"ci", {s.ci_lo, s.ci_hi}}, {"p_value", s.p_value}};
    }
    cj["estimands"] = est;
    if (o.keep_draws) {
      json draws;
      for (std::size_t e = 0; e < kNumEstimands; ++e) {
        std::vector<double> col;
        for (const auto& d : c.draws) col.push_back(d[e]);
        draws[to_string(static_cast<Estimand>(e))] = col;
      }
      cj["draws"] = draws;
    }
    comps.push_back(cj);
  }
  result["components"] = comps;
  finish_manifest(manifest, start, o.common.no_timing);

  json doc;
  doc["manifest"] = manifest.to_json();
  doc["result"] = result;
  const fs::path path = fs::path(o.common.out_dir) / "bootstrap.json";
  write_json(path, doc);
  out << "bootstrap: " << res.B - res.n_failed << " of " << res.B << " replicates kept, written to "
      << path.string() << "\n";
  if (2 * res.n_failed > res.B) {
    err << "error: more than half of the bootstrap replicates failed\n";
    return kExitNumerical;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DesignOptions {
  int sim = 1;
  int p = 10;
  int n = 500;
  int T = 100;
  std::string eig_scale = "log";

  SimulationDesign design(std::uint64_t seed) const {
    if (sim != 1 && sim != 2) throw Error(ErrorCode::InvalidArgument, "--sim must be 1 or 2");
    SimulationDesign d = sim == 1 ? SimulationDesign::case1(p, n, T) : SimulationDesign::case2(p, n, T);
    if (eig_scale == "log") {
      d.scale = EigenScale::Log;
    } else if (eig_scale == "raw") {
      d.scale = EigenScale::Raw;
    } else {
      throw Error(ErrorCode::InvalidArgument, "--eig-scale must be log or raw");
    }
    d.seed = seed;
    d.validate();
    return d;
  }
};

json design_json(const SimulationDesign& d) {
  return {{"p", d.p},
          {"n", d.n},
          {"T", d.T},
          {"q", d.q},
          {"mediation_dims", d.mediation_dims},
          {"coef_magnitude", d.coef_magnitude},
          {"error_sd", d.error_sd},
          {"confounder_coef", d.confounder_coef},
          {"log_eig_mean_hi", d.log_eig_mean_hi},
          {"log_eig_mean_lo", d.log_eig_mean_lo},
          {"eig_sd", d.eig_sd},
          {"eig_scale", d.scale == EigenScale::Log ? "log" : "raw"}};
}

struct SimulateOptions {
  CommonOptions common;
  DesignOptions design;
  std::string layout = "dir";
  bool misspecify = false;
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  const auto start = Clock::now();
  const SimulationDesign design = o.design.design(o.common.seed);
  if (o.layout != "dir" && o.layout != "long") throw Error(ErrorCode::InvalidArgument, "--layout must be dir or long");

  const SimulatedDataset sim = generate_dataset(design);
  const fs::path dir(o.common.out_dir);
  fs::create_directories(dir);
  const fs::path subjects = dir / "subjects.csv";
  const fs::path mediators = o.layout == "dir" ? dir / "mediators" : dir / "mediators.csv";
  write_dataset(sim.units, subjects, mediators,
                o.layout == "dir" ? MediatorLayout::PerUnitDirectory : MediatorLayout::LongTable);

  RunManifest manifest;
  manifest.command = "simulate";
  manifest.seed = o.common.seed;
  manifest.tool_version = tool_version();
  json cfg = {{"sim", o.design.sim}, {"layout", o.layout}, {"misspecify", o.misspecify}};
  cfg["design"] = design_json(design);
  manifest.config = cfg;
  finish_manifest(manifest, start, o.common.no_timing);

  const auto& t = sim.truth;
  json truth;
  json pi = json::array();
  for (Index j = 0; j < t.Pi.cols(); ++j) pi.push_back(vec_json(t.Pi.col(j)));
  truth["pi"] = pi;
  truth["mediation_dims"] = t.mediation_dims;
  truth["alpha0"] = t.alpha0;
  truth["alpha"] = t.alpha;
  truth["gamma0"] = t.gamma0;
  truth["gamma"] = t.gamma;
  truth["beta"] = t.beta;
  truth["phi1"] = vec_json(t.phi1);
  truth["phi2"] = vec_json(t.phi2);
  truth["aie"] = t.aie;
  truth["ade"] = t.ade;

  json doc;
  doc["manifest"] = manifest.to_json();
  doc["subjects"] = subjects.string();
  doc["mediators"] = mediators.string();
  doc["fit_without_confounders"] = o.misspecify;
  doc["truth"] = truth;
  write_json(dir / "truth.json", doc);
  out << "simulate: " << design.n << " units written to " << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ReplicateOptions {
  CommonOptions common;
  OptimizerOptions opt;
  DesignOptions design;
  int reps = 50;
  bool misspecify = false;
  int max_components = 4;
  double dfd_threshold = 2.0;
  std::string h = "pooled";
};

int cmd_replicate(const ReplicateOptions& o, std::ostream& out) {
  const auto start = Clock::now();
  const SimulationDesign design = o.design.design(o.common.seed);
  MethodConfig method;
  method.optimizer = o.opt.config(0, 1);
  method.h = parse_constraint_kind(o.h);
  method.max_k = o.max_components;
  method.dfd_threshold = o.dfd_threshold;
  method.misspecify = o.misspecify;
  method.threads = resolve_threads(o.common.threads);
  if (o.max_components < 1) throw Error(ErrorCode::InvalidArgument, "--max-components must be positive");

  const ReplicationResult res = replication_study(design, o.reps, method);

  RunManifest manifest;
  manifest.command = "replicate";
  manifest.seed = o.common.seed;
  manifest.tool_version = tool_version();
  json cfg = {{"sim", o.design.sim},
              {"reps", o.reps},
              {"misspecify", o.misspecify},
              {"max_components", o.max_components},
              {"dfd_threshold", o.dfd_threshold},
              {"h", o.h}};
  cfg["design"] = design_json(design);
  cfg["optimizer"] = optimizer_json(method.optimizer);
  manifest.config = cfg;
  finish_manifest(manifest, start, o.common.no_timing);

  json metrics = json::array();
  for (const auto& m : res.metrics) {
    metrics.push_back({{"dim", "D" + std::to_string(m.dim)},
                       {"mean_similarity", m.mean_similarity},
                       {"se_similarity", m.se_similarity},
                       {"median_similarity", m.median_similarity},
                       {"bias", m.bias},
                       {"mse", m.mse},
                       {"median_abs_bias", m.median_abs_bias},
                       {"median_sq_error", m.median_sq_error},
                       {"n_matched", m.n_matched}});
  }
  json records = json::array();
  for (const auto& r : res.records) {
    records.push_back({{"replicate", r.replicate},
                       {"failed", r.failed},
                       {"error", r.error},
                       {"n_components", r.n_components},
                       {"matched", r.matched},
                       {"similarity", r.similarity},
                       {"aie", r.aie},
                       {"worst_relative_ascent", r.worst_relative_ascent}});
  }
  json doc;
  doc["manifest"] = manifest.to_json();
  doc["n_reps"] = res.n_reps;
  doc["n_failed"] = res.n_failed;
  doc["worst_relative_ascent"] = res.worst_relative_ascent;
  doc["metrics"] = metrics;
  doc["records"] = records;

  const fs::path dir(o.common.out_dir);
  const std::string csv = metrics_csv(res);
  write_text(dir / "metrics.csv", csv);
  write_json(dir / "metrics.json", doc);
  out << csv;
  return kExitOk;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* cmd, CommonOptions& c) {
  cmd->add_option("--seed", c.seed, "Seed for every random draw of the command");
  cmd->add_option("--threads", c.threads, "Worker threads (default: GMED_THREADS, then all cores)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", c.out_dir, "Output directory");
  cmd->add_flag("--no-timing", c.no_timing, "Leave wall-clock runtime out of the manifest");
}

void add_optimizer(CLI::App* cmd, OptimizerOptions& o) {
  cmd->add_option("--random-starts", o.random_starts, "Random starting points per component");
  cmd->add_flag("--no-eigvec-starts", o.no_eigvec_starts, "Skip the pooled-covariance eigenvector starts");
  cmd->add_option("--max-iter", o.max_iter, "Outer iteration cap per start");
  cmd->add_option("--tol", o.tol, "Relative objective change at convergence");
}

void add_design(CLI::App* cmd, DesignOptions& d) {
  cmd->add_option("--sim", d.sim, "Simulation design, 1 or 2");
  cmd->add_option("--p", d.p, "Mediator dimension");
  cmd->add_option("--n", d.n, "Number of units");
  cmd->add_option("--T", d.T, "Observations per unit");
  cmd->add_option("--eig-scale", d.eig_scale, "Scale of the non-mediation eigenvalue draws: log or raw");
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return kExitUsage;
    case ErrorCategory::Input: return kExitInput;
    case ErrorCategory::Numerical: return kExitNumerical;
  }
  return kExitNumerical;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal mediation analysis with covariance-graph mediators"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tool_version()));

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Extract mediation components and their effects");
  add_common(fit_cmd, fit.common);
  add_optimizer(fit_cmd, fit.opt);
  fit_cmd->add_option("--subjects", fit.subjects, "Subject table CSV")->required();
  fit_cmd->add_option("--mediators", fit.mediators, "Directory of <unit_id>.csv or long-format CSV")->required();
  fit_cmd->add_option("--max-components", fit.max_components, "Upper bound on extracted components");
  fit_cmd->add_option("--dfd-threshold", fit.dfd_threshold, "Stop when DfD would exceed this value");
  fit_cmd->add_option("--h", fit.h, "Normalization matrix: identity or pooled");
  fit_cmd->add_flag("--center", fit.center, "Remove per-unit column means first");

  BootstrapOptions boot;
  auto* boot_cmd = app.add_subcommand("bootstrap", "Unit bootstrap with the fitted projections held fixed");
  add_common(boot_cmd, boot.common);
  boot_cmd->add_option("--fit", boot.fit, "result.json from a previous fit")->required();
  boot_cmd->add_option("--subjects", boot.subjects, "Override the subject table recorded in the fit");
  boot_cmd->add_option("--mediators", boot.mediators, "Override the mediator source recorded in the fit");
  boot_cmd->add_option("--B", boot.B, "Bootstrap replicates");
  boot_cmd->add_option("--level", boot.level, "Confidence level");
  boot_cmd->add_flag("--keep-draws", boot.keep_draws, "Store every replicate's estimates");

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Write one synthetic dataset and its ground truth");
  add_common(sim_cmd, sim.common);
  add_design(sim_cmd, sim.design);
  sim_cmd->add_option("--layout", sim.layout, "Mediator layout: dir or long");
  sim_cmd->add_flag("--misspecify", sim.misspecify, "Mark the dataset for fitting without confounders");

  ReplicateOptions rep;
  auto* rep_cmd = app.add_subcommand("replicate", "Simulation study with metrics per planted component");
  add_common(rep_cmd, rep.common);
  add_optimizer(rep_cmd, rep.opt);
  add_design(rep_cmd, rep.design);
  rep_cmd->add_option("--reps", rep.reps, "Replicates");
  rep_cmd->add_flag("--misspecify", rep.misspecify, "Fit without the confounders");
  rep_cmd->add_option("--max-components", rep.max_components, "Upper bound on extracted components");
  rep_cmd->add_option("--dfd-threshold", rep.dfd_threshold, "Stop when DfD would exceed this value");
  rep_cmd->add_option("--h", rep.h, "Normalization matrix: identity or pooled");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit, out);
    if (*boot_cmd) return cmd_bootstrap(boot, out, err);
    if (*sim_cmd) return cmd_simulate(sim, out);
    if (*rep_cmd) return cmd_replicate(rep, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitUsage;
}

}  // namespace gmed::cli
