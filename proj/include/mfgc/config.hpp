// Run configuration: a sectioned `key = value` text format, the RunConfig
// struct holding every tunable with its default, and builders assembling the
// ProblemSpec / OuterOptions the solver consumes.
//
// Format rules: '#' starts a comment, blank lines are skipped, `[section]`
// opens a section, and every other line must read `key = value` inside a
// known section.  Unknown sections or keys, duplicate keys, and malformed
// numbers are rejected with the 1-based line number.  List values (homotopy
// schedule, bump center) are comma-separated.  Validation errors name the
// offending key, the violated constraint, and the line that set the key.

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mfgc/coupler.hpp"
#include "mfgc/drift.hpp"
#include "mfgc/errors.hpp"
#include "mfgc/grid.hpp"
#include "mfgc/models.hpp"

namespace mfgc {

// Every tunable of a run, defaults materialized.  Required keys (no usable
// default): model.kind, domain.dim, domain.radius, domain.nodes,
// time.horizon, time.steps, dynamics.nu.
struct RunConfig {
  // [model]
  std::string model_kind;     // exhaustible_linear | crowd_motion | power | saturated_power
  double epsilon = 0.5;       // exhaustible_linear: market impact, >= 0
  double blend = 0.6;         // crowd_motion: weight of the congested part, in [0, 1]
  double lambda = 0.5;        // crowd_motion: congestion strength, >= 0
  double apower = 2.0;        // crowd_motion: effort exponent, > 1
  double q1 = 2.0;            // crowd_motion: congestion moment exponent
  double qprime = 2.0;        // power / saturated_power (and crowd corner), > 1
  double kernel_amp = 0.4;    // crowd_motion: cosine kernel amplitude, in [0, 1)
  double saturation = 1.0;    // saturated_power: speed-limit exponent, in (0, 1]
  // [domain]
  int dim = 0;                // 1 or 2
  double radius = 0.0;        // torus side length, > 0
  int nodes = 0;              // grid nodes per axis, >= 4
  // [time]
  double horizon = 0.0;       // > 0
  int steps = 0;              // >= 1
  // [dynamics]
  double nu = 0.0;            // viscosity, > 0
  std::string drift = "identity";  // identity | scale | saturating
  double drift_scale = 1.0;        // scale: per-axis gain, finite nonzero
  double drift_saturation = 1.0;   // saturating: exponent, in (0, 1]
  // [coupling]
  double terminal_amp = 0.0;       // cosine terminal base amplitude
  double terminal_strength = 0.0;  // terminal density-coupling weight (sign free)
  double running_amp = 0.0;        // cosine running base amplitude
  double running_strength = 0.0;   // running density-coupling weight (sign free)
  double smoothing = 0.0;          // coupling smoother weight, >= 0
  // [initial]
  std::string initial_kind = "gaussian";  // gaussian | uniform | point
  std::vector<double> center = {0.0};     // bump center; one entry broadcasts
  double width = 0.35;                    // gaussian width, > 0
  // [solver]
  double outer_tolerance = 1e-8;
  double inner_tolerance = 1e-10;
  int max_outer = 150;
  double damping = 0.5;
  std::vector<double> homotopy = {0.0, 0.25, 0.5, 0.75, 1.0};
  // [probe]
  int inits = 3;
  unsigned seed = 0;
  // [output]
  std::string directory = "mfgc_out";

  // Parse bookkeeping: "section.key" -> 1-based line, for error reporting.
  std::map<std::string, int> key_lines;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

inline double parse_number(const std::string& value, const std::string& key, int line) {
  std::size_t used = 0;
  double parsed = 0.0;
  try {
    parsed = std::stod(value, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != value.size() || !std::isfinite(parsed))
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as a finite number",
                      line);
  return parsed;
}

inline long long parse_integer(const std::string& value, const std::string& key, int line) {
  std::size_t used = 0;
  long long parsed = 0;
  try {
    parsed = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != value.size())
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as an integer", line);
  return parsed;
}

inline int parse_bounded_int(const std::string& value, const std::string& key, int line) {
  const long long parsed = parse_integer(value, key, line);
  if (parsed < std::numeric_limits<int>::min() || parsed > std::numeric_limits<int>::max())
    throw ConfigError("key '" + key + "': value out of range", line);
  return static_cast<int>(parsed);
}

inline std::vector<double> parse_number_list(const std::string& value, const std::string& key,
                                             int line) {
  std::vector<double> out;
  std::string piece;
  std::istringstream in(value);
  while (std::getline(in, piece, ',')) {
    piece = trim(piece);
    if (piece.empty())
      throw ConfigError("key '" + key + "': empty entry in list '" + value + "'", line);
    out.push_back(parse_number(piece, key, line));
  }
  if (out.empty()) throw ConfigError("key '" + key + "': list is empty", line);
  return out;
}

// One validation failure, pointing back at the line that set the key.
inline void require_key(bool ok, const RunConfig& cfg, const std::string& key,
                        const std::string& constraint) {
  if (ok) return;
  const auto it = cfg.key_lines.find(key);
  throw ConfigError("key '" + key + "': must satisfy " + constraint,
                    it == cfg.key_lines.end() ? 0 : it->second);
}

inline void assign_config_entry(RunConfig& cfg, const std::string& section,
                                const std::string& key, const std::string& value, int line) {
  const std::string full = section + "." + key;
  const auto num = [&] { return parse_number(value, full, line); };
  const auto integer = [&] { return parse_bounded_int(value, full, line); };
  const auto list = [&] { return parse_number_list(value, full, line); };

  if (section == "model") {
    if (key == "kind") cfg.model_kind = value;
    else if (key == "epsilon") cfg.epsilon = num();
    else if (key == "blend") cfg.blend = num();
    else if (key == "lambda") cfg.lambda = num();
    else if (key == "apower") cfg.apower = num();
    else if (key == "q1") cfg.q1 = num();
    else if (key == "qprime") cfg.qprime = num();
    else if (key == "kernel_amp") cfg.kernel_amp = num();
    else if (key == "saturation") cfg.saturation = num();
    else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "domain") {
    if (key == "dim") cfg.dim = integer();
    else if (key == "radius") cfg.radius = num();
    else if (key == "nodes") cfg.nodes = integer();
    else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "time") {
    if (key == "horizon") cfg.horizon = num();
    else if (key == "steps") cfg.steps = integer();
    else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "dynamics") {
    if (key == "nu") cfg.nu = num();
    else if (key == "drift") cfg.drift = value;
    else if (key == "drift_scale") cfg.drift_scale = num();
    else if (key == "drift_saturation") cfg.drift_saturation = num();
    else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "coupling") {
    if (key == "terminal_amp") cfg.terminal_amp = num();
    else if (key == "terminal_strength") cfg.terminal_strength = num();
    else if (key == "running_amp") cfg.running_amp = num();
    else if (key == "running_strength") cfg.running_strength = num();
    else if (key == "smoothing") cfg.smoothing = num();
    else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "initial") {
    if (key == "kind") cfg.initial_kind = value;
    else if (key == "center") cfg.center = list();
    else if (key == "width") cfg.width = num();
    else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "solver") {
    if (key == "outer_tolerance") cfg.outer_tolerance = num();
    else if (key == "inner_tolerance") cfg.inner_tolerance = num();
    else if (key == "max_outer") cfg.max_outer = integer();
    else if (key == "damping") cfg.damping = num();
    else if (key == "homotopy") cfg.homotopy = list();
    else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "probe") {
    if (key == "inits") cfg.inits = integer();
    else if (key == "seed") {
      const long long s = parse_integer(value, full, line);
      if (s < 0 || s > std::numeric_limits<unsigned>::max())
        throw ConfigError("key '" + full + "': must satisfy 0 <= seed <= 2^32-1", line);
      cfg.seed = static_cast<unsigned>(s);
    } else throw ConfigError("unknown key '" + full + "'", line);
  } else if (section == "output") {
    if (key == "directory") cfg.directory = value;
    else throw ConfigError("unknown key '" + full + "'", line);
  } else {
    throw ConfigError("unknown section '" + section + "'", line);
  }
}

}  // namespace detail

// Cross-field validation of a parsed RunConfig.  Presence of required keys
// is judged from the parse bookkeeping, so this is meant for configs that
// came through parse_config / parse_config_text.
inline void validate_config(const RunConfig& cfg) {
  using detail::require_key;

  static constexpr const char* required[] = {"model.kind",   "domain.dim",  "domain.radius",
                                             "domain.nodes", "time.horizon", "time.steps",
                                             "dynamics.nu"};
  std::string missing;
  for (const char* key : required)
    if (!cfg.key_lines.count(key)) {
      if (!missing.empty()) missing += ", ";
      missing += key;
    }
  if (!missing.empty()) throw ConfigError("missing required keys: " + missing, 0);

  const bool known_kind = cfg.model_kind == "exhaustible_linear" ||
                          cfg.model_kind == "crowd_motion" || cfg.model_kind == "power" ||
                          cfg.model_kind == "saturated_power";
  require_key(known_kind, cfg, "model.kind",
              "one of exhaustible_linear, crowd_motion, power, saturated_power");
  require_key(cfg.epsilon >= 0.0, cfg, "model.epsilon", "epsilon >= 0");
  require_key(cfg.blend >= 0.0 && cfg.blend <= 1.0, cfg, "model.blend", "0 <= blend <= 1");
  require_key(cfg.lambda >= 0.0, cfg, "model.lambda", "lambda >= 0");
  require_key(cfg.apower > 1.0, cfg, "model.apower", "apower > 1");
  require_key(cfg.qprime > 1.0, cfg, "model.qprime", "qprime > 1");
  require_key(cfg.kernel_amp >= 0.0 && cfg.kernel_amp < 1.0, cfg, "model.kernel_amp",
              "0 <= kernel_amp < 1");
  require_key(cfg.saturation > 0.0 && cfg.saturation <= 1.0, cfg, "model.saturation",
              "0 < saturation <= 1");
  if (cfg.model_kind == "crowd_motion") {
    const double growth = cfg.blend > 0.0 ? std::max(2.0, cfg.apower) : cfg.apower;
    require_key(cfg.q1 >= conjugate_exponent(growth), cfg, "model.q1",
                "q1 >= the conjugate exponent of the cost growth");
  }

  require_key(cfg.dim == 1 || cfg.dim == 2, cfg, "domain.dim", "dim in {1, 2}");
  require_key(cfg.radius > 0.0, cfg, "domain.radius", "radius > 0");
  require_key(cfg.nodes >= 4, cfg, "domain.nodes", "nodes >= 4");
  if (cfg.model_kind == "exhaustible_linear")
    require_key(cfg.dim == 1, cfg, "domain.dim", "dim = 1 (exhaustible_linear is 1-D)");

  require_key(cfg.horizon > 0.0, cfg, "time.horizon", "horizon > 0");
  require_key(cfg.steps >= 1, cfg, "time.steps", "steps >= 1");

  require_key(cfg.nu > 0.0, cfg, "dynamics.nu", "nu > 0");
  const bool known_drift =
      cfg.drift == "identity" || cfg.drift == "scale" || cfg.drift == "saturating";
  require_key(known_drift, cfg, "dynamics.drift", "one of identity, scale, saturating");
  require_key(cfg.drift_scale != 0.0 && std::isfinite(cfg.drift_scale), cfg,
              "dynamics.drift_scale", "a finite nonzero value");
  require_key(cfg.drift_saturation > 0.0 && cfg.drift_saturation <= 1.0, cfg,
              "dynamics.drift_saturation", "0 < drift_saturation <= 1");
  if (cfg.model_kind == "saturated_power")
    require_key(cfg.drift == "identity", cfg, "dynamics.drift",
                "identity (saturated_power carries its own gain map)");

  require_key(cfg.smoothing >= 0.0, cfg, "coupling.smoothing", "smoothing >= 0");

  const bool known_initial = cfg.initial_kind == "gaussian" || cfg.initial_kind == "uniform" ||
                             cfg.initial_kind == "point";
  require_key(known_initial, cfg, "initial.kind", "one of gaussian, uniform, point");
  require_key(cfg.width > 0.0, cfg, "initial.width", "width > 0");
  require_key(cfg.center.size() == 1 || cfg.center.size() == static_cast<std::size_t>(cfg.dim),
              cfg, "initial.center", "one entry or one entry per axis");

  require_key(cfg.outer_tolerance > 0.0, cfg, "solver.outer_tolerance", "outer_tolerance > 0");
  require_key(cfg.inner_tolerance > 0.0, cfg, "solver.inner_tolerance", "inner_tolerance > 0");
  require_key(cfg.max_outer >= 1, cfg, "solver.max_outer", "max_outer >= 1");
  require_key(cfg.damping > 0.0 && cfg.damping <= 1.0, cfg, "solver.damping",
              "0 < damping <= 1");
  bool schedule_ok = !cfg.homotopy.empty();
  double prev = -1.0;
  for (double th : cfg.homotopy) {
    if (!(th >= 0.0) || th > 1.0 || th <= prev) schedule_ok = false;
    prev = th;
  }
  require_key(schedule_ok, cfg, "solver.homotopy",
              "a strictly increasing list of values in [0, 1]");

  require_key(cfg.inits >= 2, cfg, "probe.inits", "inits >= 2");
  require_key(!cfg.directory.empty(), cfg, "output.directory", "a non-empty path");
}

// Parses raw config text.  Structural problems (unknown keys, duplicates,
// malformed lines) are reported at their line; validation runs afterwards.
inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto comment = raw.find('#');
    if (comment != std::string::npos) raw.resize(comment);
    const std::string line = detail::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw ConfigError("malformed section header '" + line + "'", line_no);
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value', got '" + line + "'", line_no);
    if (section.empty())
      throw ConfigError("entry before any [section] header", line_no);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("expected 'key = value', got '" + line + "'", line_no);
    const std::string full = section + "." + key;
    if (cfg.key_lines.count(full))
      throw ConfigError("duplicate key '" + full + "'", line_no);
    detail::assign_config_entry(cfg, section, key, value, line_no);
    cfg.key_lines[full] = line_no;
  }
  validate_config(cfg);
  return cfg;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

namespace detail {

// Signed offset from c to x along one periodic axis of length a.
inline double wrapped_offset(double x, double c, double a) {
  double d = x - c;
  d -= a * std::round(d / a);
  return d;
}

}  // namespace detail

template <std::size_t D>
GridField<D> build_initial_density(const RunConfig& cfg, const TorusGrid<D>& grid) {
  Vec<D> center{};
  for (std::size_t i = 0; i < D; ++i)
    center[i] = cfg.center.size() == 1 ? cfg.center[0] : cfg.center[i];

  GridField<D> m0 = GridField<D>::zeros(grid, 1);
  if (cfg.initial_kind == "uniform") {
    for (double& v : m0.values) v = 1.0;
  } else if (cfg.initial_kind == "point") {
    // All mass in the cell closest to the requested center.
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < grid.num_nodes(); ++j) {
      const Vec<D> x = grid.coord(j);
      double dist = 0.0;
      for (std::size_t i = 0; i < D; ++i) {
        const double d = detail::wrapped_offset(x[i], center[i], grid.radius);
        dist += d * d;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    m0.values[best] = 1.0;
  } else {  // gaussian, wrapped around the torus
    for (std::size_t j = 0; j < grid.num_nodes(); ++j) {
      const Vec<D> x = grid.coord(j);
      double quad = 0.0;
      for (std::size_t i = 0; i < D; ++i) {
        const double d = detail::wrapped_offset(x[i], center[i], grid.radius);
        quad += d * d;
      }
      m0.values[j] = std::exp(-quad / (2.0 * cfg.width * cfg.width));
    }
  }

  double mass = 0.0;
  for (double v : m0.values) mass += v;
  mass *= cell_volume(grid);
  for (double& v : m0.values) v /= mass;
  return m0;
}

template <std::size_t D>
std::shared_ptr<const LagrangianModel<D>> build_model(const RunConfig& cfg) {
  std::shared_ptr<const LagrangianModel<D>> base;
  if (cfg.model_kind == "exhaustible_linear") {
    if constexpr (D == 1) base = std::make_shared<ExhaustibleLinear>(cfg.epsilon);
  } else if (cfg.model_kind == "crowd_motion") {
    const double amp = cfg.kernel_amp;
    const double radius = cfg.radius;
    const auto kernel = [amp, radius](Vec<D> x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < D; ++i) acc += std::cos(2.0 * pi * x[i] / radius);
      return 1.0 + amp * acc / static_cast<double>(D);
    };
    base = std::make_shared<CrowdMotion<D>>(cfg.blend, cfg.lambda, cfg.apower, cfg.q1, kernel);
  } else if (cfg.model_kind == "power") {
    base = std::make_shared<PowerLagrangian<D>>(cfg.qprime);
  } else if (cfg.model_kind == "saturated_power") {
    base = std::make_shared<SaturatedPowerModel<D>>(cfg.qprime, cfg.saturation);
  }
  if (!base) throw ConfigError("model '" + cfg.model_kind + "' is not available in " +
                               std::to_string(D) + "-D");

  if (cfg.drift == "scale") {
    Vec<D> gains{};
    for (std::size_t i = 0; i < D; ++i) gains[i] = cfg.drift_scale;
    base = std::make_shared<DriftTransformedModel<D>>(
        base, std::make_shared<ComponentScaleDrift<D>>(gains));
  } else if (cfg.drift == "saturating") {
    base = std::make_shared<DriftTransformedModel<D>>(
        base, std::make_shared<SaturatingDrift<D>>(cfg.drift_saturation));
  }
  return base;
}

// Cosine profile shared by the terminal and running cost bases: the mean of
// the first harmonic over the axes, scaled by the configured amplitude.
template <std::size_t D>
double cosine_profile(const Vec<D>& x, double amp, double radius) {
  double acc = 0.0;
  for (std::size_t i = 0; i < D; ++i) acc += std::cos(2.0 * pi * x[i] / radius);
  return amp * acc / static_cast<double>(D);
}

template <std::size_t D>
ProblemSpec<D> build_problem(const RunConfig& cfg) {
  static_assert(D == 1 || D == 2, "build_problem supports 1-D and 2-D runs");
  ProblemSpec<D> prob;
  prob.grid = TorusGrid<D>{cfg.nodes, cfg.radius};
  prob.time = TimeGrid(cfg.horizon, cfg.steps);
  prob.nu = cfg.nu;
  try {
    prob.model = build_model<D>(cfg);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("model parameters rejected: ") + e.what());
  }
  prob.initial_density = build_initial_density<D>(cfg, prob.grid);

  const double radius = cfg.radius;
  if (cfg.terminal_amp != 0.0) {
    const double amp = cfg.terminal_amp;
    prob.coupling.terminal_base = GridField<D>::sample_scalar(
        prob.grid, [amp, radius](Vec<D> x) { return cosine_profile<D>(x, amp, radius); });
  }
  prob.coupling.terminal_coupling = cfg.terminal_strength;
  if (cfg.running_amp != 0.0) {
    const double amp = cfg.running_amp;
    prob.coupling.running_base = [amp, radius](double, const Vec<D>& x) {
      return cosine_profile<D>(x, amp, radius);
    };
  }
  prob.coupling.running_coupling = cfg.running_strength;
  prob.coupling.smoothing = cfg.smoothing;
  return prob;
}

inline OuterOptions build_options(const RunConfig& cfg) {
  OuterOptions opts;
  opts.tolerance = cfg.outer_tolerance;
  opts.max_iterations = cfg.max_outer;
  opts.damping = cfg.damping;
  opts.homotopy = cfg.homotopy;
  opts.law.tolerance = cfg.inner_tolerance;
  return opts;
}

}  // namespace mfgc
