// Coupled solver for the backward value equation and the forward density
// equation linked through the control law.
//
// One outer iteration, starting from paths (u, m, alpha):
//   1. backward sweep: solve the value equation down from the terminal
//      condition with the law statistics frozen at (m, alpha);
//   2. forward sweep: rebuild the density path from m0, solving the
//      control-law fixed point at each node against the fresh value gradient
//      and stepping the density with the resulting drift;
//   3. mix the old and new control paths (damped Picard, or running averages
//      once progress stalls) and drive the density path with the mixed
//      control so the stored pair stays consistent.
// Convergence is declared only after a verification pass: the returned value
// path is an exact backward sweep of the returned laws, the density path is
// an exact forward sweep of the returned control, and the reported residual
// triple (value, control, density) bounds the remaining fixed-point gap.
// A stage that exhausts its iteration budget returns the same verified state
// flagged non-converged instead of throwing.  Failures below the outer loop
// still surface as typed errors; a control-law fixed point that dies inside
// the forward sweep is rethrown with the homotopy value, outer iteration,
// and time node attached.
//
// The problem data is continued in a scale parameter theta in [0,1] that
// multiplies the control cost, the running cost, and the terminal condition
// together: theta=0 switches the control off and zeroes the value entirely
// (the solve is exact in one iteration) and each stage starts from the
// previous stage's solution.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mfgc/conjugate.hpp"
#include "mfgc/control_fixed_point.hpp"
#include "mfgc/errors.hpp"
#include "mfgc/grid.hpp"
#include "mfgc/models.hpp"
#include "mfgc/pde.hpp"

namespace mfgc {

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

// Costs entering the two equations.  The density-dependent parts act through
// the smoothing operator S = (I + smoothing * K)^{-1} (identity if smoothing
// is zero), so both couplings are monotone exactly when their strengths are
// nonnegative:
//   terminal value  g(x, m) = terminal_base(x) + terminal_coupling * (S m)(x)
//   running cost  f(t, x, m) = running_base(t, x) + running_coupling * (S m)(x)
template <std::size_t D>
struct CouplingSpec {
  GridField<D> terminal_base;  // empty field means zero
  double terminal_coupling = 0.0;
  std::function<double(double, const Vec<D>&)> running_base;  // null means zero
  double running_coupling = 0.0;
  double smoothing = 0.0;
};

template <std::size_t D>
struct ProblemSpec {
  TorusGrid<D> grid;
  TimeGrid time;
  double nu = 1.0;
  std::shared_ptr<const LagrangianModel<D>> model;
  GridField<D> initial_density;
  CouplingSpec<D> coupling;

  void validate() const {
    if (!model) throw ParameterError("ProblemSpec: model is required");
    if (!(nu > 0.0)) throw ParameterError("ProblemSpec: nu must be positive");
    require_same_grid(grid, initial_density.grid, "ProblemSpec initial density");
    if (!initial_density.is_scalar())
      throw ShapeError("ProblemSpec: initial density must be scalar");
    initial_density.require_finite("ProblemSpec initial density");
    double mass = 0.0, low = initial_density.values[0];
    for (double v : initial_density.values) {
      mass += v;
      low = std::min(low, v);
    }
    mass *= cell_volume(grid);
    if (std::abs(mass - 1.0) > 1e-8)
      throw ParameterError("ProblemSpec: initial density must have unit mass");
    if (low < 0.0) throw ParameterError("ProblemSpec: initial density must be nonnegative");
    if (!coupling.terminal_base.values.empty()) {
      require_same_grid(grid, coupling.terminal_base.grid, "ProblemSpec terminal value");
      if (!coupling.terminal_base.is_scalar())
        throw ShapeError("ProblemSpec: terminal value must be scalar");
    }
    if (!(coupling.smoothing >= 0.0))
      throw ParameterError("ProblemSpec: smoothing must be >= 0");
  }
};

struct OuterOptions {
  double tolerance = 1e-6;  // sup-norm bound on the final residual triple
  int max_iterations = 150;
  double damping = 0.5;  // weight on the fresh control path
  std::vector<double> homotopy = {0.0, 0.25, 0.5, 0.75, 1.0};
  // Less than (1 - stall_factor) relative progress over stall_window outer
  // iterations switches the mixing to running averages for the rest of the
  // stage.
  int stall_window = 5;
  double stall_factor = 0.99;
  ControlLawOptions law;
  ConjugateOptions conjugate;
  // Called once per outer iteration: (theta, iteration, increment, averaging).
  std::function<void(double, int, double, bool)> progress;

  void validate() const {
    if (!(tolerance > 0.0)) throw ParameterError("OuterOptions: tolerance must be positive");
    if (max_iterations < 1) throw ParameterError("OuterOptions: max_iterations must be >= 1");
    if (!(damping > 0.0) || damping > 1.0)
      throw ParameterError("OuterOptions: damping must lie in (0, 1]");
    if (homotopy.empty()) throw ParameterError("OuterOptions: homotopy schedule is empty");
    double prev = -1.0;
    for (double th : homotopy) {
      if (!(th >= 0.0) || th > 1.0)
        throw ParameterError("OuterOptions: homotopy values must lie in [0, 1]");
      if (th <= prev) throw ParameterError("OuterOptions: homotopy must increase strictly");
      prev = th;
    }
    if (stall_window < 1) throw ParameterError("OuterOptions: stall_window must be >= 1");
    if (!(stall_factor > 0.0) || stall_factor >= 1.0)
      throw ParameterError("OuterOptions: stall_factor must lie in (0, 1)");
    law.validate();
  }
};

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

// Per-outer-iteration movement of the three coupled paths: sup-norm change of
// the value path, L1 change of the density path (max over time nodes), and
// sup-norm change of the control path.  The stage stops iterating once the
// largest of the three drops below the outer tolerance; the verification pass
// then has the final word on convergence.
struct OuterIncrement {
  double value = 0.0;
  double density = 0.0;
  double control = 0.0;
  double max() const { return std::max({value, density, control}); }
};

struct StageReport {
  double theta = 1.0;
  int iterations = 0;
  bool converged = false;
  bool used_averaging = false;
  double value_residual = 0.0;
  double control_residual = 0.0;
  double density_residual = 0.0;
  double value_sup = 0.0;     // sup_{t,x} |u|
  double gradient_sup = 0.0;  // sup_{t,x} |grad u|
  double lambda_sup = 0.0;    // sup_t Lambda_inf of the control law
  std::vector<OuterIncrement> increments;
};

template <std::size_t D>
struct MfgSolution {
  std::vector<GridField<D>> u;        // steps+1 scalar fields
  DensityPath<D> density;             // steps+1 scalar fields
  std::vector<GridField<D>> control;  // steps+1 d-component fields
  std::vector<StageReport> stages;    // one per attempted homotopy value

  // True exactly when every attempted stage converged.  The homotopy stops at
  // the first stage that exhausts its budget; the paths then hold that
  // stage's flagged (still verified) state.
  bool converged = false;

  // Final-stage diagnostics.
  double value_residual = 0.0;
  double control_residual = 0.0;
  double density_residual = 0.0;
  double mass_error = 0.0;    // max_n |mass(n) - 1|
  double min_density = 0.0;   // min over the whole path
  double seam_mass = 0.0;     // max_n mass in the cells touching the periodic seam
  double value_sup = 0.0;
  double gradient_sup = 0.0;
  double lambda_sup = 0.0;
  double max_principle_bound = 0.0;  // terminal sup + T (|f| + |H(.,0,.)|) margin
  bool max_principle_ok = true;

  const StageReport& final_stage() const { return stages.back(); }
};

// ---------------------------------------------------------------------------
// Path helpers
// ---------------------------------------------------------------------------

namespace detail {

template <std::size_t D>
double path_sup_gap(const std::vector<GridField<D>>& a, const std::vector<GridField<D>>& b) {
  double gap = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t k = 0; k < a[n].values.size(); ++k)
      gap = std::max(gap, std::abs(a[n].values[k] - b[n].values[k]));
  return gap;
}

template <std::size_t D>
double path_l1_gap(const DensityPath<D>& a, const DensityPath<D>& b) {
  const double vol = cell_volume(a.grid);
  double gap = 0.0;
  for (std::size_t n = 0; n < a.slices.size(); ++n) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.slices[n].values.size(); ++k)
      s += std::abs(a.slices[n].values[k] - b.slices[n].values[k]);
    gap = std::max(gap, s * vol);
  }
  return gap;
}

template <std::size_t D>
struct MfgIterate {
  std::vector<GridField<D>> u;
  DensityPath<D> density;
  std::vector<GridField<D>> control;
};

// Machinery for one homotopy stage: the theta-scaled cost plus the fixed
// operators (diffusion solve, density stepper, coupling smoother).
template <std::size_t D>
class StageSolver {
 public:
  StageSolver(const ProblemSpec<D>& prob, const OuterOptions& opts, double theta)
      : prob_(prob),
        opts_(opts),
        theta_(theta),
        model_(theta == 1.0
                   ? prob.model
                   : std::shared_ptr<const LagrangianModel<D>>(
                         std::make_shared<ScaledModel<D>>(prob.model, theta))),
        eval_(*model_, opts.conjugate),
        diffusion_(prob.grid, prob.nu * prob.time.dt),
        stepper_(prob.grid, prob.nu, prob.time.dt),
        terminal_base_(prob.coupling.terminal_base.values.empty()
                           ? GridField<D>::zeros(prob.grid, 1)
                           : prob.coupling.terminal_base) {
    if (prob.coupling.smoothing > 0.0) smoother_.emplace(prob.grid, prob.coupling.smoothing);
  }

  double theta() const { return theta_; }
  const LagrangianModel<D>& model() const { return *model_; }
  const HamiltonianEvaluator<D>& evaluator() const { return eval_; }

  GridField<D> smooth(const GridField<D>& m) const {
    return smoother_ ? smoother_->apply_inverse(m) : m;
  }

  // The cost scale multiplies the coupling data as well as the control cost:
  // the terminal condition is theta g and the source is theta f, so at
  // theta = 0 the value equation is the plain heat flow from zero data and
  // the value vanishes identically.
  GridField<D> terminal_value(const GridField<D>& m_final) const {
    if (theta_ == 0.0) return GridField<D>::zeros(prob_.grid, 1);
    GridField<D> g = terminal_base_;
    if (prob_.coupling.terminal_coupling != 0.0) {
      const GridField<D> sm = smooth(m_final);
      for (std::size_t k = 0; k < g.values.size(); ++k)
        g.values[k] += prob_.coupling.terminal_coupling * sm.values[k];
    }
    if (theta_ != 1.0)
      for (double& v : g.values) v *= theta_;
    return g;
  }

  GridField<D> running_cost(int n, const GridField<D>& m_n) const {
    GridField<D> f = GridField<D>::zeros(prob_.grid, 1);
    if (theta_ == 0.0) return f;
    const double t = prob_.time.node(n);
    if (prob_.coupling.running_base)
      for (std::size_t j = 0; j < prob_.grid.num_nodes(); ++j)
        f.values[j] = prob_.coupling.running_base(t, prob_.grid.coord(j));
    if (prob_.coupling.running_coupling != 0.0) {
      const GridField<D> sm = smooth(m_n);
      for (std::size_t k = 0; k < f.values.size(); ++k)
        f.values[k] += prob_.coupling.running_coupling * sm.values[k];
    }
    if (theta_ != 1.0)
      for (double& v : f.values) v *= theta_;
    return f;
  }

  // Backward sweep of the value equation with laws frozen at (m, alpha).
  std::vector<GridField<D>> backward(const DensityPath<D>& m,
                                     const std::vector<GridField<D>>& alpha) const {
    const int steps = prob_.time.steps;
    std::vector<GridField<D>> u(static_cast<std::size_t>(steps) + 1);
    u[static_cast<std::size_t>(steps)] = terminal_value(m[steps]);
    GridField<D> hvals = GridField<D>::zeros(prob_.grid, 1);
    for (int n = steps - 1; n >= 0; --n) {
      const double t = prob_.time.node(n);
      const LawSummary<D> s = model_->law_summary(m[n], alpha[static_cast<std::size_t>(n)]);
      const GridField<D> grad = gradient_central(u[static_cast<std::size_t>(n) + 1]);
      eval_.best_response_field(t, grad, s, nullptr, &hvals);
      GridField<D> source = running_cost(n, m[n]);
      for (std::size_t k = 0; k < source.values.size(); ++k)
        source.values[k] = hvals.values[k] - source.values[k];
      u[static_cast<std::size_t>(n)] =
          hjb_step_backward(diffusion_, prob_.time.dt, u[static_cast<std::size_t>(n) + 1], source);
    }
    return u;
  }

  // Forward sweep: control-law solves against the value gradients, density
  // steps with the resulting drift.  Warm starts chain across time nodes.
  // An inner fixed point that dies here is rethrown with the homotopy value,
  // the outer iteration, and the time node attached.
  void forward(const std::vector<GridField<D>>& u, const std::vector<GridField<D>>* prev_control,
               DensityPath<D>* m_out, std::vector<GridField<D>>* alpha_out,
               int outer_iteration) const {
    const int steps = prob_.time.steps;
    *m_out = DensityPath<D>(prob_.grid, prob_.time);
    alpha_out->assign(static_cast<std::size_t>(steps) + 1,
                      GridField<D>::zeros(prob_.grid, static_cast<int>(D)));
    (*m_out)[0] = prob_.initial_density;
    for (int n = 0; n <= steps; ++n) {
      const double t = prob_.time.node(n);
      const GridField<D> p = gradient_central(u[static_cast<std::size_t>(n)]);
      const GridField<D>* warm = nullptr;
      if (n > 0)
        warm = &(*alpha_out)[static_cast<std::size_t>(n) - 1];
      else if (prev_control && !prev_control->empty())
        warm = &(*prev_control)[0];
      try {
        const ControlLawResult<D> r =
            warm ? solve_control_law(eval_, t, p, (*m_out)[n], *warm, opts_.law)
                 : solve_control_law(eval_, t, p, (*m_out)[n], opts_.law);
        (*alpha_out)[static_cast<std::size_t>(n)] = r.control;
      } catch (const FixedPointError& e) {
        char msg[256];
        std::snprintf(msg, sizeof msg,
                      "forward sweep at theta=%.4g, outer iteration %d, time node %d: %s",
                      theta_, outer_iteration, n, e.what());
        throw FixedPointError(msg, e.residual_history);
      }
      if (n < steps)
        (*m_out)[n + 1] = stepper_.step((*m_out)[n], (*alpha_out)[static_cast<std::size_t>(n)], n);
    }
  }

  // Density path driven by a fixed control path.
  DensityPath<D> drive(const std::vector<GridField<D>>& control) const {
    DensityPath<D> m(prob_.grid, prob_.time);
    m[0] = prob_.initial_density;
    for (int n = 0; n < prob_.time.steps; ++n)
      m[n + 1] = stepper_.step(m[n], control[static_cast<std::size_t>(n)], n);
    return m;
  }

  // Equation defect of a control path against the laws of (u, m).
  double control_defect(const std::vector<GridField<D>>& u, const DensityPath<D>& m,
                        const std::vector<GridField<D>>& alpha) const {
    double defect = 0.0;
    GridField<D> br = GridField<D>::zeros(prob_.grid, static_cast<int>(D));
    for (int n = 0; n <= prob_.time.steps; ++n) {
      const double t = prob_.time.node(n);
      const auto& a = alpha[static_cast<std::size_t>(n)];
      const LawSummary<D> s = model_->law_summary(m[n], a);
      const GridField<D> p = gradient_central(u[static_cast<std::size_t>(n)]);
      eval_.best_response_field(t, p, s, &br, nullptr);
      defect = std::max(defect, support_defect(m[n], a, br));
    }
    return defect;
  }

  MfgIterate<D> start_from(std::vector<GridField<D>> control) const {
    MfgIterate<D> it;
    it.control = std::move(control);
    it.density = drive(it.control);
    it.u = backward(it.density, it.control);
    return it;
  }

  MfgIterate<D> cold_start() const {
    return start_from(std::vector<GridField<D>>(
        static_cast<std::size_t>(prob_.time.steps) + 1,
        GridField<D>::zeros(prob_.grid, static_cast<int>(D))));
  }

  // Runs the damped outer iteration until the verified residual triple drops
  // below the tolerance.  Exhausting the budget is not an error: the stage
  // returns its last iterate with the same verification pass applied and the
  // report flagged non-converged, so the residuals stay honest either way.
  MfgIterate<D> run(MfgIterate<D> iterate, StageReport& report) const {
    report = StageReport{};
    report.theta = theta_;
    double omega = opts_.damping;
    bool averaging = false;
    int average_age = 0;

    for (int k = 1; k <= opts_.max_iterations; ++k) {
      const std::vector<GridField<D>> u_new = backward(iterate.density, iterate.control);
      DensityPath<D> m_new;
      std::vector<GridField<D>> a_new;
      forward(u_new, &iterate.control, &m_new, &a_new, k);

      OuterIncrement inc;
      inc.value = path_sup_gap<D>(u_new, iterate.u);
      inc.control = path_sup_gap<D>(a_new, iterate.control);
      inc.density = path_l1_gap(m_new, iterate.density);
      report.increments.push_back(inc);
      report.iterations = k;

      if (!averaging && k > opts_.stall_window) {
        const double before =
            report.increments[static_cast<std::size_t>(k - 1 - opts_.stall_window)].max();
        if (inc.max() > opts_.stall_factor * before) {
          averaging = true;
          report.used_averaging = true;
        }
      }

      double weight = omega;
      if (averaging) {
        weight = 1.0 / (average_age + 2.0);
        ++average_age;
      }
      for (std::size_t n = 0; n < iterate.control.size(); ++n)
        for (std::size_t j = 0; j < iterate.control[n].values.size(); ++j)
          iterate.control[n].values[j] =
              (1.0 - weight) * iterate.control[n].values[j] + weight * a_new[n].values[j];
      iterate.density = drive(iterate.control);
      iterate.u = u_new;

      if (opts_.progress) opts_.progress(theta_, k, inc.max(), averaging);

      if (inc.max() <= opts_.tolerance && finalize(iterate, report)) return iterate;
    }
    finalize(iterate, report);
    return iterate;
  }

 private:
  // Verification pass on the stored iterate.  Recomputes the exact backward
  // sweep of the stored laws (which becomes the returned value path), one
  // exact forward pass from it, the best-response defect of the stored
  // control, and declares convergence only if all three gaps sit within the
  // outer tolerance.  The residual triple therefore measures how far one more
  // exact outer step would move the solution, on both exit paths.
  bool finalize(MfgIterate<D>& iterate, StageReport& report) const {
    std::vector<GridField<D>> u_star = backward(iterate.density, iterate.control);
    DensityPath<D> m_star;
    std::vector<GridField<D>> a_star;
    forward(u_star, &iterate.control, &m_star, &a_star, report.iterations);
    report.value_residual = path_sup_gap<D>(u_star, iterate.u);
    report.control_residual = control_defect(u_star, iterate.density, iterate.control);
    report.density_residual = path_l1_gap(m_star, iterate.density);
    iterate.u = std::move(u_star);
    report.converged =
        std::max({report.value_residual, report.control_residual, report.density_residual}) <=
        opts_.tolerance;
    report.value_sup = 0.0;
    report.gradient_sup = 0.0;
    report.lambda_sup = 0.0;
    fill_sups(iterate, report);
    return report.converged;
  }

  void fill_sups(const MfgIterate<D>& it, StageReport& report) const {
    for (int n = 0; n <= prob_.time.steps; ++n) {
      report.value_sup = std::max(report.value_sup, it.u[static_cast<std::size_t>(n)].max_abs());
      report.gradient_sup = std::max(
          report.gradient_sup, gradient_central(it.u[static_cast<std::size_t>(n)]).max_norm());
      report.lambda_sup = std::max(
          report.lambda_sup, mfgc::lambda_sup(it.density[n], it.control[static_cast<std::size_t>(n)]));
    }
  }

  const ProblemSpec<D>& prob_;
  const OuterOptions& opts_;
  double theta_;
  std::shared_ptr<const LagrangianModel<D>> model_;
  HamiltonianEvaluator<D> eval_;
  ImplicitHeat<D> diffusion_;
  TransportDiffusionStepper<D> stepper_;
  std::optional<ImplicitHeat<D>> smoother_;
  GridField<D> terminal_base_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Monotonicity quadratures
// ---------------------------------------------------------------------------

// Quadratic form of the density couplings on the difference of two density
// paths:  running_coupling * sum_n w_n <S d_n, d_n> + terminal_coupling *
// <S d_T, d_T> with d = m1 - m2 and trapezoidal weights.  The smoothing
// operator is symmetric positive definite, so the sign of each term is the
// sign of its coupling strength; a negative value certifies a non-monotone
// coupling on this pair of paths.
template <std::size_t D>
double coupling_monotonicity_gap(const ProblemSpec<D>& prob, const DensityPath<D>& m1,
                                 const DensityPath<D>& m2) {
  prob.validate();
  require_same_grid(prob.grid, m1.grid, "coupling_monotonicity_gap");
  require_same_grid(prob.grid, m2.grid, "coupling_monotonicity_gap");
  const std::size_t nodes = static_cast<std::size_t>(prob.time.steps) + 1;
  if (m1.slices.size() != nodes || m2.slices.size() != nodes)
    throw ShapeError("coupling_monotonicity_gap: paths must cover every time node");
  const double vol = cell_volume(prob.grid);
  std::optional<ImplicitHeat<D>> smoother;
  if (prob.coupling.smoothing > 0.0) smoother.emplace(prob.grid, prob.coupling.smoothing);
  const auto form = [&](const GridField<D>& d) {
    const GridField<D> sd = smoother ? smoother->apply_inverse(d) : d;
    double acc = 0.0;
    for (std::size_t k = 0; k < d.values.size(); ++k) acc += sd.values[k] * d.values[k];
    return acc * vol;
  };

  double running = 0.0;
  GridField<D> diff = GridField<D>::zeros(prob.grid, 1);
  for (int n = 0; n <= prob.time.steps; ++n) {
    if (prob.coupling.running_coupling == 0.0) break;
    for (std::size_t k = 0; k < diff.values.size(); ++k)
      diff.values[k] = m1[n].values[k] - m2[n].values[k];
    const double w = (n == 0 || n == prob.time.steps) ? 0.5 : 1.0;
    running += w * prob.time.dt * form(diff);
  }
  double terminal = 0.0;
  if (prob.coupling.terminal_coupling != 0.0) {
    for (std::size_t k = 0; k < diff.values.size(); ++k)
      diff.values[k] = m1[prob.time.steps].values[k] - m2[prob.time.steps].values[k];
    terminal = form(diff);
  }
  return prob.coupling.running_coupling * running + prob.coupling.terminal_coupling * terminal;
}

// Gap decomposition behind the uniqueness argument, evaluated on two law
// paths.  Every term is nonnegative when the control cost is convex and
// monotone and the couplings have nonnegative strength, and every term
// vanishes when the two paths coincide:
//   first/second_bregman: convexity gaps of the cost between the two control
//     fields, weighted by the respective densities;
//   law_gap: the control-interaction monotonicity quadrature;
//   running/terminal_gap: the density-coupling quadratic forms.
struct EnergyBreakdown {
  double first_bregman = 0.0;
  double second_bregman = 0.0;
  double law_gap = 0.0;
  double running_gap = 0.0;
  double terminal_gap = 0.0;
  double total() const {
    return first_bregman + second_bregman + law_gap + running_gap + terminal_gap;
  }
};

template <std::size_t D>
EnergyBreakdown energy_identity_check(const ProblemSpec<D>& prob, const DensityPath<D>& m1,
                                      const std::vector<GridField<D>>& alpha1,
                                      const DensityPath<D>& m2,
                                      const std::vector<GridField<D>>& alpha2) {
  prob.validate();
  require_same_grid(prob.grid, m1.grid, "energy_identity_check");
  require_same_grid(prob.grid, m2.grid, "energy_identity_check");
  const std::size_t nodes = static_cast<std::size_t>(prob.time.steps) + 1;
  if (alpha1.size() != nodes || alpha2.size() != nodes || m1.slices.size() != nodes ||
      m2.slices.size() != nodes)
    throw ShapeError("energy_identity_check: paths must cover every time node");

  const LagrangianModel<D>& model = *prob.model;
  const double vol = cell_volume(prob.grid);
  EnergyBreakdown out;

  for (int n = 0; n <= prob.time.steps; ++n) {
    const double t = prob.time.node(n);
    const double w = ((n == 0 || n == prob.time.steps) ? 0.5 : 1.0) * prob.time.dt;
    const auto& a1 = alpha1[static_cast<std::size_t>(n)];
    const auto& a2 = alpha2[static_cast<std::size_t>(n)];
    const LawSummary<D> s1 = model.law_summary(m1[n], a1);
    const LawSummary<D> s2 = model.law_summary(m2[n], a2);

    double b1 = 0.0, b2 = 0.0;
    for (std::size_t j = 0; j < prob.grid.num_nodes(); ++j) {
      const Vec<D> x = prob.grid.coord(j);
      const Vec<D> v1 = a1.vec(j), v2 = a2.vec(j);
      const Vec<D> d12 = vsub<D>(v2, v1);
      if (m1[n].values[j] > 0.0) {
        const double gap = model.lagrangian(t, x, v2, s1) - model.lagrangian(t, x, v1, s1) -
                           dot<D>(model.lagrangian_grad_control(t, x, v1, s1), d12);
        b1 += gap * m1[n].values[j];
      }
      if (m2[n].values[j] > 0.0) {
        const double gap = model.lagrangian(t, x, v1, s2) - model.lagrangian(t, x, v2, s2) +
                           dot<D>(model.lagrangian_grad_control(t, x, v2, s2), d12);
        b2 += gap * m2[n].values[j];
      }
    }
    out.first_bregman += w * b1 * vol;
    out.second_bregman += w * b2 * vol;

    const ControlLaw<D> law1(m1[n], a1);
    const ControlLaw<D> law2(m2[n], a2);
    out.law_gap += w * monotonicity_gap(model, t, law1, law2);
  }

  // Density-coupling quadratic forms, reusing the shared quadrature.
  ProblemSpec<D> runner = prob;
  runner.coupling.terminal_coupling = 0.0;
  out.running_gap = coupling_monotonicity_gap(runner, m1, m2);
  runner.coupling.terminal_coupling = prob.coupling.terminal_coupling;
  runner.coupling.running_coupling = 0.0;
  out.terminal_gap = coupling_monotonicity_gap(runner, m1, m2);
  return out;
}

// ---------------------------------------------------------------------------
// Main entry points
// ---------------------------------------------------------------------------

template <std::size_t D>
MfgSolution<D> solve_mfg(const ProblemSpec<D>& prob, const OuterOptions& opts = {}) {
  prob.validate();
  opts.validate();

  MfgSolution<D> out;
  detail::MfgIterate<D> iterate;
  bool first = true;
  for (double theta : opts.homotopy) {
    detail::StageSolver<D> stage(prob, opts, theta);
    StageReport report;
    if (first) {
      iterate = stage.run(stage.cold_start(), report);
      first = false;
    } else {
      // Continuation: reuse the previous stage's paths, refreshing the value
      // path against the new cost scale.
      iterate.u = stage.backward(iterate.density, iterate.control);
      iterate = stage.run(std::move(iterate), report);
    }
    out.stages.push_back(report);
    // A stage that ran out of budget ends the continuation; the verified but
    // flagged state of that stage is what gets reported.
    if (!report.converged) break;
  }
  out.converged = out.stages.back().converged;

  out.u = std::move(iterate.u);
  out.density = std::move(iterate.density);
  out.control = std::move(iterate.control);

  const StageReport& last = out.stages.back();
  out.value_residual = last.value_residual;
  out.control_residual = last.control_residual;
  out.density_residual = last.density_residual;
  out.value_sup = last.value_sup;
  out.gradient_sup = last.gradient_sup;
  out.lambda_sup = last.lambda_sup;

  // Path diagnostics.
  out.min_density = out.density.min_value(0);
  for (int n = 0; n <= prob.time.steps; ++n) {
    out.mass_error = std::max(out.mass_error, std::abs(out.density.mass(n) - 1.0));
    out.min_density = std::min(out.min_density, out.density.min_value(n));
    double seam = 0.0;
    for (std::size_t j = 0; j < prob.grid.num_nodes(); ++j) {
      const auto idx = prob.grid.unflatten(j);
      bool edge = false;
      for (std::size_t i = 0; i < D; ++i)
        if (idx[i] == 0 || idx[i] == prob.grid.n - 1) edge = true;
      if (edge) seam += out.density[n].values[j];
    }
    out.seam_mass = std::max(out.seam_mass, seam * cell_volume(prob.grid));
  }

  // Comparison-principle bound: terminal data plus the accumulated sup of the
  // running cost and of the zero-gradient cost level, evaluated at the last
  // attempted cost scale.
  {
    detail::StageSolver<D> stage(prob, opts, out.stages.back().theta);
    double f_sup = 0.0, h0_sup = 0.0;
    const Vec<D> zero{};
    for (int n = 0; n <= prob.time.steps; ++n) {
      const GridField<D> f = stage.running_cost(n, out.density[n]);
      f_sup = std::max(f_sup, f.max_abs());
      const LawSummary<D> s =
          stage.model().law_summary(out.density[n], out.control[static_cast<std::size_t>(n)]);
      const double t = prob.time.node(n);
      for (std::size_t j = 0; j < prob.grid.num_nodes(); ++j)
        h0_sup = std::max(
            h0_sup, std::abs(stage.evaluator().hamiltonian(t, prob.grid.coord(j), zero, s)));
    }
    const double g_sup = out.u[static_cast<std::size_t>(prob.time.steps)].max_abs();
    out.max_principle_bound =
        g_sup + prob.time.horizon * (f_sup + h0_sup) + 10.0 * opts.tolerance;
    out.max_principle_ok = out.value_sup <= out.max_principle_bound;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Uniqueness probe
// ---------------------------------------------------------------------------

template <std::size_t D>
struct ProbeRun {
  bool converged = false;
  // Why the run is not usable: the outer budget ran out (flagged report) or a
  // typed solver error fired below the outer loop.  Empty when converged.
  std::string failure;
  MfgSolution<D> solution;  // populated unless a typed error aborted the run
};

template <std::size_t D>
struct UniquenessReport {
  std::vector<ProbeRun<D>> runs;
  // Pairwise gaps over the converged runs.
  double value_gap = 0.0;
  double density_gap = 0.0;
  double control_gap = 0.0;
  // Monotonicity quadratures on the most distant pair of initial law paths;
  // these are computed before solving, so they detect a non-monotone setup
  // even when all runs land on the same solution.
  double lagrangian_monotonicity_gap = 0.0;
  double coupling_gap = 0.0;

  bool monotone(double tol = 1e-10) const {
    return lagrangian_monotonicity_gap >= -tol && coupling_gap >= -tol;
  }
  bool unique_within(double tol) const {
    return std::max({value_gap, density_gap, control_gap}) <= tol;
  }
};

// Solves the full-strength problem from `num_runs` distinct initial control
// paths and reports how far apart the results land.  The homotopy is skipped
// deliberately: a theta sweep funnels every start into the same continuation
// path, which would hide non-uniqueness.  Seed zero keeps the fixed
// alternating-amplitude wave family; a nonzero seed draws wave amplitudes and
// phases reproducibly (run 0 always starts from rest).
template <std::size_t D>
UniquenessReport<D> uniqueness_probe(const ProblemSpec<D>& prob, OuterOptions opts,
                                     int num_runs = 3, unsigned seed = 0) {
  prob.validate();
  if (num_runs < 2) throw ParameterError("uniqueness_probe: need at least two runs");
  opts.homotopy = {1.0};
  opts.validate();

  const double theta = 1.0;
  detail::StageSolver<D> stage(prob, opts, theta);
  const std::size_t nodes = static_cast<std::size_t>(prob.time.steps) + 1;

  // Well-separated initial control paths: zero, then smooth waves of
  // alternating sign.
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> amp_draw(0.2, 0.8);
  std::uniform_real_distribution<double> phase_draw(0.0, 2.0 * pi);
  std::vector<std::vector<GridField<D>>> inits;
  for (int r = 0; r < num_runs; ++r) {
    GridField<D> field = GridField<D>::zeros(prob.grid, static_cast<int>(D));
    if (r > 0) {
      Vec<D> amp{}, phase{};
      for (std::size_t i = 0; i < D; ++i) {
        if (seed == 0) {
          amp[i] = 0.4 * r * (r % 2 == 0 ? -1.0 : 1.0);
          phase[i] = r;
        } else {
          amp[i] = amp_draw(rng) * (r % 2 == 0 ? -1.0 : 1.0);
          phase[i] = phase_draw(rng);
        }
      }
      for (std::size_t j = 0; j < prob.grid.num_nodes(); ++j) {
        const Vec<D> x = prob.grid.coord(j);
        for (std::size_t i = 0; i < D; ++i)
          field(j, static_cast<int>(i)) =
              amp[i] * std::cos(2.0 * pi * x[i] / prob.grid.radius + phase[i]);
      }
    }
    inits.emplace_back(nodes, field);
  }

  // Initial law paths and the pre-solve monotonicity quadratures on the most
  // distant pair.
  std::vector<DensityPath<D>> init_density;
  init_density.reserve(inits.size());
  for (const auto& c : inits) init_density.push_back(stage.drive(c));
  std::size_t best_i = 0, best_j = 1;
  double best = -1.0;
  for (std::size_t i = 0; i < inits.size(); ++i)
    for (std::size_t j = i + 1; j < inits.size(); ++j) {
      const double d = detail::path_l1_gap(init_density[i], init_density[j]) +
                       detail::path_sup_gap<D>(inits[i], inits[j]);
      if (d > best) {
        best = d;
        best_i = i;
        best_j = j;
      }
    }

  UniquenessReport<D> report;
  const EnergyBreakdown decomposition = energy_identity_check(
      prob, init_density[best_i], inits[best_i], init_density[best_j], inits[best_j]);
  report.lagrangian_monotonicity_gap = decomposition.law_gap;
  report.coupling_gap = decomposition.running_gap + decomposition.terminal_gap;

  for (int r = 0; r < num_runs; ++r) {
    ProbeRun<D> run;
    try {
      StageReport stage_report;
      detail::MfgIterate<D> it = stage.run(stage.start_from(inits[static_cast<std::size_t>(r)]),
                                           stage_report);
      run.converged = stage_report.converged;
      if (!run.converged) {
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "outer iteration limit reached at theta=%.3f after %d iterations",
                      stage_report.theta, stage_report.iterations);
        run.failure = msg;
      }
      run.solution.u = std::move(it.u);
      run.solution.density = std::move(it.density);
      run.solution.control = std::move(it.control);
      run.solution.stages.push_back(stage_report);
      run.solution.converged = stage_report.converged;
      run.solution.value_residual = stage_report.value_residual;
      run.solution.control_residual = stage_report.control_residual;
      run.solution.density_residual = stage_report.density_residual;
    } catch (const FixedPointError& e) {
      run.failure = e.what();
    } catch (const StepError& e) {
      run.failure = e.what();
    } catch (const NumericError& e) {
      run.failure = e.what();
    }
    report.runs.push_back(std::move(run));
  }

  for (std::size_t i = 0; i < report.runs.size(); ++i)
    for (std::size_t j = i + 1; j < report.runs.size(); ++j) {
      if (!report.runs[i].converged || !report.runs[j].converged) continue;
      const auto& a = report.runs[i].solution;
      const auto& b = report.runs[j].solution;
      report.value_gap = std::max(report.value_gap, detail::path_sup_gap<D>(a.u, b.u));
      report.density_gap =
          std::max(report.density_gap, detail::path_l1_gap(a.density, b.density));
      report.control_gap =
          std::max(report.control_gap, detail::path_sup_gap<D>(a.control, b.control));
    }
  return report;
}

}  // namespace mfgc
