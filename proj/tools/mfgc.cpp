// mfgc: command-line driver around the solver headers.
//
//   mfgc solve <config>              solve the coupled system, write fields,
//                                    convergence history, and report.json
//   mfgc audit <config>              growth / monotonicity / gain-map audits
//                                    without solving any PDEs (report-only)
//   mfgc probe-uniqueness <config>   solve from several distinct starts and
//       [--inits K] [--seed S]       report how far apart the results land
//
// Exit codes: 0 success; 2 the solver finished but was flagged non-converged
// (solve: budget exhausted; probe: at least one inconclusive run); 1 any
// error (config parse/validation, I/O, typed solver failures).
//
// MFGC_THREADS is read and echoed into report.json; the solver itself runs
// serially, so the value only labels the run.  Reruns with an identical
// config, seed, and MFGC_THREADS produce byte-identical artifacts.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfgc/config.hpp"
#include "mfgc/control_fixed_point.hpp"
#include "mfgc/coupler.hpp"
#include "mfgc/drift.hpp"
#include "mfgc/report_io.hpp"
#include "mfgc/version.hpp"

using ordered_json = nlohmann::ordered_json;

namespace {

enum class Mode { solve, audit, probe };

int worker_count() {
  const char* env = std::getenv("MFGC_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long parsed = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || parsed < 1)
    throw std::runtime_error("MFGC_THREADS must be a positive integer, got '" +
                             std::string(env) + "'");
  return static_cast<int>(parsed);
}

ordered_json config_echo(const mfgc::RunConfig& cfg) {
  ordered_json j;
  j["model"] = {{"kind", cfg.model_kind},   {"epsilon", cfg.epsilon},
                {"blend", cfg.blend},       {"lambda", cfg.lambda},
                {"apower", cfg.apower},     {"q1", cfg.q1},
                {"qprime", cfg.qprime},     {"kernel_amp", cfg.kernel_amp},
                {"saturation", cfg.saturation}};
  j["domain"] = {{"dim", cfg.dim}, {"radius", cfg.radius}, {"nodes", cfg.nodes}};
  j["time"] = {{"horizon", cfg.horizon}, {"steps", cfg.steps}};
  j["dynamics"] = {{"nu", cfg.nu},
                   {"drift", cfg.drift},
                   {"drift_scale", cfg.drift_scale},
                   {"drift_saturation", cfg.drift_saturation}};
  j["coupling"] = {{"terminal_amp", cfg.terminal_amp},
                   {"terminal_strength", cfg.terminal_strength},
                   {"running_amp", cfg.running_amp},
                   {"running_strength", cfg.running_strength},
                   {"smoothing", cfg.smoothing}};
  j["initial"] = {{"kind", cfg.initial_kind}, {"center", cfg.center}, {"width", cfg.width}};
  j["solver"] = {{"outer_tolerance", cfg.outer_tolerance},
                 {"inner_tolerance", cfg.inner_tolerance},
                 {"max_outer", cfg.max_outer},
                 {"damping", cfg.damping},
                 {"homotopy", cfg.homotopy}};
  j["probe"] = {{"inits", cfg.inits}, {"seed", cfg.seed}};
  j["output"] = {{"directory", cfg.directory}};
  return j;
}

ordered_json report_header(const char* command, const mfgc::RunConfig& cfg) {
  ordered_json j;
  j["version"] = std::string("mfgc ") + mfgc::version_string;
  j["command"] = command;
  j["workers"] = worker_count();
  j["config"] = config_echo(cfg);
  return j;
}

ordered_json stage_json(const mfgc::StageReport& st) {
  ordered_json j;
  j["theta"] = st.theta;
  j["iterations"] = st.iterations;
  j["converged"] = st.converged;
  j["used_averaging"] = st.used_averaging;
  j["value_residual"] = st.value_residual;
  j["control_residual"] = st.control_residual;
  j["density_residual"] = st.density_residual;
  j["value_sup"] = st.value_sup;
  j["gradient_sup"] = st.gradient_sup;
  j["lambda_sup"] = st.lambda_sup;
  return j;
}

std::filesystem::path prepare_output_dir(const mfgc::RunConfig& cfg) {
  const std::filesystem::path dir(cfg.directory);
  std::filesystem::create_directories(dir);
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("output path '" + dir.string() + "' is not a directory");
  return dir;
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

template <std::size_t D>
int run_solve(const mfgc::RunConfig& cfg) {
  const mfgc::ProblemSpec<D> prob = mfgc::build_problem<D>(cfg);
  const mfgc::OuterOptions opts = mfgc::build_options(cfg);
  const mfgc::MfgSolution<D> sol = mfgc::solve_mfg(prob, opts);

  const std::filesystem::path dir = prepare_output_dir(cfg);
  mfgc::write_file_atomic(dir / "fields_u.csv", mfgc::field_csv<D>(sol.u, "value"));
  mfgc::write_file_atomic(dir / "fields_m.csv", mfgc::field_csv<D>(sol.density.slices, "density"));
  mfgc::write_file_atomic(dir / "fields_alpha.csv", mfgc::field_csv<D>(sol.control, "alpha"));
  mfgc::write_file_atomic(dir / "convergence.csv", mfgc::convergence_csv(sol.stages));

  ordered_json report = report_header("solve", cfg);
  report["converged"] = sol.converged;
  ordered_json stages = ordered_json::array();
  for (const mfgc::StageReport& st : sol.stages) stages.push_back(stage_json(st));
  report["stages"] = std::move(stages);
  report["diagnostics"] = {{"value_residual", sol.value_residual},
                           {"control_residual", sol.control_residual},
                           {"density_residual", sol.density_residual},
                           {"mass_error", sol.mass_error},
                           {"min_density", sol.min_density},
                           {"seam_mass", sol.seam_mass},
                           {"value_sup", sol.value_sup},
                           {"gradient_sup", sol.gradient_sup},
                           {"lambda_sup", sol.lambda_sup},
                           {"max_principle_bound", sol.max_principle_bound},
                           {"max_principle_ok", sol.max_principle_ok}};
  mfgc::write_file_atomic(dir / "report.json", report.dump(2) + "\n");

  if (!sol.converged) {
    const mfgc::StageReport& last = sol.final_stage();
    std::fprintf(stderr,
                 "mfgc: flagged non-convergence at theta=%g after %d iterations "
                 "(see %s/report.json)\n",
                 last.theta, last.iterations, cfg.directory.c_str());
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// probe-uniqueness
// ---------------------------------------------------------------------------

template <std::size_t D>
int run_probe(const mfgc::RunConfig& cfg) {
  const mfgc::ProblemSpec<D> prob = mfgc::build_problem<D>(cfg);
  const mfgc::OuterOptions opts = mfgc::build_options(cfg);
  const mfgc::UniquenessReport<D> rep =
      mfgc::uniqueness_probe(prob, opts, cfg.inits, cfg.seed);

  bool all_converged = true;
  ordered_json runs = ordered_json::array();
  for (const mfgc::ProbeRun<D>& run : rep.runs) {
    all_converged = all_converged && run.converged;
    ordered_json jr;
    jr["converged"] = run.converged;
    jr["failure"] = run.failure;
    if (!run.solution.stages.empty()) {
      const mfgc::StageReport& st = run.solution.stages.front();
      jr["iterations"] = st.iterations;
      jr["value_residual"] = st.value_residual;
      jr["control_residual"] = st.control_residual;
      jr["density_residual"] = st.density_residual;
    }
    runs.push_back(std::move(jr));
  }

  const double pass_tolerance = 10.0 * opts.tolerance;
  ordered_json report = report_header("probe-uniqueness", cfg);
  report["probe"] = {{"inits", cfg.inits},
                     {"seed", cfg.seed},
                     {"runs", std::move(runs)},
                     {"all_converged", all_converged},
                     {"value_gap", rep.value_gap},
                     {"density_gap", rep.density_gap},
                     {"control_gap", rep.control_gap},
                     {"pass_tolerance", pass_tolerance},
                     {"unique_within_tolerance", rep.unique_within(pass_tolerance)},
                     {"lagrangian_monotonicity_gap", rep.lagrangian_monotonicity_gap},
                     {"coupling_gap", rep.coupling_gap},
                     {"monotone", rep.monotone()}};

  const std::filesystem::path dir = prepare_output_dir(cfg);
  mfgc::write_file_atomic(dir / "report.json", report.dump(2) + "\n");

  if (!all_converged) {
    std::fprintf(stderr,
                 "mfgc: probe inconclusive: at least one run did not converge "
                 "(see %s/report.json)\n",
                 cfg.directory.c_str());
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

template <std::size_t D>
int run_audit(const mfgc::RunConfig& cfg) {
  const mfgc::ProblemSpec<D> prob = mfgc::build_problem<D>(cfg);
  const mfgc::LagrangianModel<D>& model = *prob.model;
  mfgc::HamiltonianEvaluator<D> eval(model);
  std::mt19937 rng(cfg.seed);
  std::uniform_real_distribution<double> coef(-0.5, 0.5);

  // Smooth random fields: three cosine modes per axis with drawn weights.
  const auto sample_scalar = [&](bool positive_density) {
    std::array<std::array<double, 3>, D> w{}, ph{};
    for (std::size_t i = 0; i < D; ++i)
      for (int k = 0; k < 3; ++k) {
        w[i][k] = coef(rng);
        ph[i][k] = mfgc::pi * coef(rng);
      }
    mfgc::GridField<D> f = mfgc::GridField<D>::zeros(prob.grid, 1);
    for (std::size_t j = 0; j < prob.grid.num_nodes(); ++j) {
      const mfgc::Vec<D> x = prob.grid.coord(j);
      double v = 0.0;
      for (std::size_t i = 0; i < D; ++i)
        for (int k = 0; k < 3; ++k)
          v += w[i][k] *
               std::cos(2.0 * mfgc::pi * (k + 1) * x[i] / prob.grid.radius + ph[i][k]);
      f.values[j] = positive_density ? 1.0 + v / (3.0 * static_cast<double>(D)) : v;
    }
    if (positive_density) {
      double mass = 0.0;
      for (double v : f.values) mass += v;
      mass *= mfgc::cell_volume(prob.grid);
      for (double& v : f.values) v /= mass;
    }
    return f;
  };
  const auto sample_vector = [&] {
    mfgc::GridField<D> f = mfgc::GridField<D>::zeros(prob.grid, static_cast<int>(D));
    for (int c = 0; c < static_cast<int>(D); ++c) {
      const mfgc::GridField<D> s = sample_scalar(false);
      for (std::size_t j = 0; j < prob.grid.num_nodes(); ++j) f(j, c) = s.values[j];
    }
    return f;
  };

  // Control-interaction monotonicity on sampled law pairs.
  constexpr int kPairs = 6;
  double min_gap = 0.0, max_gap = 0.0;
  bool first_gap = true;
  for (int s = 0; s < kPairs; ++s) {
    const mfgc::GridField<D> m1 = sample_scalar(true), m2 = sample_scalar(true);
    const mfgc::GridField<D> a1 = sample_vector(), a2 = sample_vector();
    const mfgc::ControlLaw<D> law1(m1, a1), law2(m2, a2);
    for (double t : {0.0, cfg.horizon}) {
      const double gap = mfgc::monotonicity_gap(model, t, law1, law2);
      min_gap = first_gap ? gap : std::min(min_gap, gap);
      max_gap = first_gap ? gap : std::max(max_gap, gap);
      first_gap = false;
    }
  }

  // Growth bounds on consistent laws built from sampled momentum fields.
  constexpr int kGrowthSamples = 3;
  ordered_json growth_samples = ordered_json::array();
  bool growth_ok = true;
  for (int s = 0; s < kGrowthSamples; ++s) {
    const mfgc::GridField<D> m = sample_scalar(true);
    const mfgc::GridField<D> p = sample_vector();
    const mfgc::ControlLawResult<D> law = mfgc::solve_control_law(eval, 0.0, p, m);
    const mfgc::GrowthBoundReport r = mfgc::check_growth_bounds(model, m, law.control, p);
    growth_ok = growth_ok && r.ok();
    growth_samples.push_back({{"moment_value", r.moment_value},
                              {"moment_bound", r.moment_bound},
                              {"sup_value", r.sup_value},
                              {"sup_bound", r.sup_bound},
                              {"ok", r.ok()}});
  }

  // Density-coupling quadratic forms on two random density paths.
  mfgc::DensityPath<D> mp1(prob.grid, prob.time), mp2(prob.grid, prob.time);
  const mfgc::GridField<D> md1 = sample_scalar(true), md2 = sample_scalar(true);
  for (int n = 0; n <= prob.time.steps; ++n) {
    mp1[n] = md1;
    mp2[n] = md2;
  }
  mfgc::ProblemSpec<D> part = prob;
  part.coupling.running_coupling = 0.0;
  const double terminal_gap = mfgc::coupling_monotonicity_gap(part, mp1, mp2);
  part.coupling.running_coupling = prob.coupling.running_coupling;
  part.coupling.terminal_coupling = 0.0;
  const double running_gap = mfgc::coupling_monotonicity_gap(part, mp1, mp2);

  // Gain-map round trips on sampled controls (identity when no gain map).
  const mfgc::IdentityDrift<D> identity;
  const mfgc::DriftMap<D>* drift = &identity;
  if (const auto* transformed = dynamic_cast<const mfgc::DriftTransformedModel<D>*>(&model))
    drift = &transformed->drift();
  double forward_roundtrip = 0.0, inverse_roundtrip = 0.0;
  for (int s = 0; s < 9; ++s) {
    mfgc::Vec<D> a{};
    if (s > 0)
      for (std::size_t i = 0; i < D; ++i) a[i] = 4.0 * coef(rng);
    const mfgc::Vec<D> beta = drift->apply(a);
    const mfgc::Vec<D> back = drift->invert(beta);
    const mfgc::Vec<D> again = drift->apply(back);
    for (std::size_t i = 0; i < D; ++i) {
      forward_roundtrip = std::max(forward_roundtrip, std::abs(back[i] - a[i]));
      inverse_roundtrip = std::max(inverse_roundtrip, std::abs(again[i] - beta[i]));
    }
  }

  const double sign_slack = 1e-10;
  const bool lagrangian_monotone = min_gap >= -sign_slack;
  const bool coupling_monotone =
      running_gap >= -sign_slack && terminal_gap >= -sign_slack;

  ordered_json report = report_header("audit", cfg);
  report["audit"] = {
      {"model",
       {{"name", model.name()},
        {"exponent_qprime", model.exponent_qprime()},
        {"growth_constant", model.growth_constant()}}},
      {"growth", {{"samples", std::move(growth_samples)}, {"all_ok", growth_ok}}},
      {"lagrangian_monotonicity",
       {{"pairs", kPairs},
        {"min_gap", min_gap},
        {"max_gap", max_gap},
        {"nonnegative", lagrangian_monotone}}},
      {"coupling",
       {{"running_gap", running_gap},
        {"terminal_gap", terminal_gap},
        {"nonnegative", coupling_monotone}}},
      {"drift",
       {{"name", drift->name()},
        {"forward_roundtrip", forward_roundtrip},
        {"inverse_roundtrip", inverse_roundtrip},
        {"ok", forward_roundtrip <= 1e-8 && inverse_roundtrip <= 1e-8}}},
      {"monotone", lagrangian_monotone && coupling_monotone}};

  const std::filesystem::path dir = prepare_output_dir(cfg);
  mfgc::write_file_atomic(dir / "report.json", report.dump(2) + "\n");
  return 0;
}

template <std::size_t D>
int dispatch(const mfgc::RunConfig& cfg, Mode mode) {
  switch (mode) {
    case Mode::solve:
      return run_solve<D>(cfg);
    case Mode::audit:
      return run_audit<D>(cfg);
    case Mode::probe:
      return run_probe<D>(cfg);
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mean field games of controls: solve, audit, and uniqueness probing"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_override;
  int inits_override = 0;
  long long seed_override = -1;

  CLI::App* solve_cmd =
      app.add_subcommand("solve", "solve the coupled system and write fields + report");
  CLI::App* audit_cmd = app.add_subcommand(
      "audit", "growth, monotonicity, and gain-map audits without solving PDEs");
  CLI::App* probe_cmd = app.add_subcommand(
      "probe-uniqueness", "solve from several distinct starts and compare the results");
  for (CLI::App* sub : {solve_cmd, audit_cmd, probe_cmd}) {
    sub->add_option("config", config_path, "run configuration file")->required();
    sub->add_option("--output", output_override, "override the [output] directory");
  }
  probe_cmd->add_option("--inits", inits_override, "number of distinct starts (>= 2)");
  probe_cmd->add_option("--seed", seed_override,
                        "seed for randomized starts (0 keeps the fixed wave family)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    mfgc::RunConfig cfg = mfgc::parse_config(config_path);
    if (!output_override.empty()) cfg.directory = output_override;
    Mode mode = Mode::solve;
    if (audit_cmd->parsed()) mode = Mode::audit;
    if (probe_cmd->parsed()) {
      mode = Mode::probe;
      if (probe_cmd->count("--inits") > 0) {
        if (inits_override < 2) throw mfgc::ConfigError("--inits must be >= 2");
        cfg.inits = inits_override;
      }
      if (probe_cmd->count("--seed") > 0) {
        if (seed_override < 0 || seed_override > 4294967295LL)
          throw mfgc::ConfigError("--seed must lie in [0, 2^32-1]");
        cfg.seed = static_cast<unsigned>(seed_override);
      }
    }
    return cfg.dim == 1 ? dispatch<1>(cfg, mode) : dispatch<2>(cfg, mode);
  } catch (const mfgc::ConfigError& e) {
    if (e.line > 0)
      std::fprintf(stderr, "mfgc: config error (line %d): %s\n", e.line, e.what());
    else
      std::fprintf(stderr, "mfgc: config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mfgc: error: %s\n", e.what());
    return 1;
  }
}
