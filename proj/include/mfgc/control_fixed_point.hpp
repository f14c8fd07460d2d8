// Fixed point on the joint state-control law at one time node.
//
// Given the value gradient p = Du(t) and the density m(t), the consistent
// control field solves alpha(x) = argmin_a { L(t, x, a, s) + p(x) . a } where
// s collects the statistics of the law (Id, alpha)#m itself.  solve_control_law
// iterates damped best responses until the equation defect
// sup_{m(x) > 0} |alpha(x) - argmin(...)| drops below the tolerance, so the
// returned control satisfies the optimality condition against its own law
// summary to that accuracy.  closed_form_control_law bypasses the iteration
// for models whose summary solves in closed form; it exists so the iterative
// path can be validated against an independent construction.

#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mfgc/conjugate.hpp"
#include "mfgc/errors.hpp"
#include "mfgc/grid.hpp"
#include "mfgc/models.hpp"

namespace mfgc {

struct ControlLawOptions {
  // Sup-norm best-response defect on the support of the density.
  double tolerance = 1e-10;
  int max_iterations = 200;
  // Weight on the fresh best response in each update; halved (at most
  // max_damping_halvings times) whenever the defect increases.
  double damping = 0.5;
  int max_damping_halvings = 4;

  void validate() const {
    if (!(tolerance > 0.0)) throw ParameterError("ControlLawOptions: tolerance must be positive");
    if (max_iterations < 1) throw ParameterError("ControlLawOptions: max_iterations must be >= 1");
    if (!(damping > 0.0) || damping > 1.0)
      throw ParameterError("ControlLawOptions: damping must lie in (0, 1]");
    if (max_damping_halvings < 0)
      throw ParameterError("ControlLawOptions: max_damping_halvings must be >= 0");
  }
};

template <std::size_t D>
struct ControlLawResult {
  GridField<D> control;   // d-component best-response control field
  LawSummary<D> summary;  // statistics of (Id, control)#density
  double residual = 0.0;  // final equation defect on the support
  int iterations = 0;     // best-response sweeps performed
};

namespace detail {

// Equation defect sup_{support} |alpha - br| measured componentwise; nodes
// carrying no mass do not constrain the law and are excluded.
template <std::size_t D>
double support_defect(const GridField<D>& density, const GridField<D>& alpha,
                      const GridField<D>& br) {
  const double floor = mass_floor(density.grid);
  double defect = 0.0;
  bool any = false;
  for (std::size_t j = 0; j < density.grid.num_nodes(); ++j) {
    if (density(j) <= floor) continue;
    any = true;
    for (int c = 0; c < alpha.components; ++c)
      defect = std::max(defect, std::abs(alpha(j, c) - br(j, c)));
  }
  if (!any) {
    // Degenerate input (no cell above the floor): fall back to all nodes so
    // the defect still means something rather than reading as converged.
    for (std::size_t k = 0; k < alpha.values.size(); ++k)
      defect = std::max(defect, std::abs(alpha.values[k] - br.values[k]));
  }
  return defect;
}

template <std::size_t D>
void check_law_inputs(const GridField<D>& grad_u, const GridField<D>& density,
                      const char* where) {
  require_same_grid(grad_u.grid, density.grid, where);
  if (grad_u.components != static_cast<int>(D))
    throw ShapeError(std::string(where) + ": value gradient needs d components");
  if (!density.is_scalar()) throw ShapeError(std::string(where) + ": density must be scalar");
}

}  // namespace detail

namespace detail {

template <std::size_t D>
ControlLawResult<D> solve_control_law_impl(const HamiltonianEvaluator<D>& eval, double t,
                                           const GridField<D>& grad_u,
                                           const GridField<D>& density,
                                           const GridField<D>* warm_start,
                                           const ControlLawOptions& opts) {
  opts.validate();
  detail::check_law_inputs(grad_u, density, "solve_control_law");

  const auto& g = density.grid;
  GridField<D> alpha = GridField<D>::zeros(g, static_cast<int>(D));
  if (warm_start) {
    require_same_grid(warm_start->grid, g, "solve_control_law warm start");
    if (warm_start->components != static_cast<int>(D))
      throw ShapeError("solve_control_law: warm start needs d components");
    alpha = *warm_start;
  }
  GridField<D> br = GridField<D>::zeros(g, static_cast<int>(D));

  double omega = opts.damping;
  int halvings = 0;
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(opts.max_iterations));

  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    const LawSummary<D> s = eval.model().law_summary(density, alpha);
    eval.best_response_field(t, grad_u, s, &br, nullptr);
    const double defect = detail::support_defect(density, alpha, br);
    history.push_back(defect);
    if (defect <= opts.tolerance)
      return ControlLawResult<D>{std::move(alpha), s, defect, iter};
    if (history.size() >= 2 && defect > history[history.size() - 2] &&
        halvings < opts.max_damping_halvings) {
      omega *= 0.5;
      ++halvings;
    }
    for (std::size_t k = 0; k < alpha.values.size(); ++k)
      alpha.values[k] = (1.0 - omega) * alpha.values[k] + omega * br.values[k];
  }

  char msg[192];
  std::snprintf(msg, sizeof msg,
                "solve_control_law: %s did not reach defect %.3e after %d sweeps (last %.3e)",
                eval.model().name().c_str(), opts.tolerance, opts.max_iterations,
                history.empty() ? 0.0 : history.back());
  throw FixedPointError(msg, std::move(history));
}

}  // namespace detail

// Cold start: the iteration begins from the zero control field.
template <std::size_t D>
ControlLawResult<D> solve_control_law(const HamiltonianEvaluator<D>& eval, double t,
                                      const GridField<D>& grad_u, const GridField<D>& density,
                                      const ControlLawOptions& opts = {}) {
  return detail::solve_control_law_impl<D>(eval, t, grad_u, density, nullptr, opts);
}

// Warm start: the iteration begins from a previous control field, typically
// the converged law of the neighboring time node.
template <std::size_t D>
ControlLawResult<D> solve_control_law(const HamiltonianEvaluator<D>& eval, double t,
                                      const GridField<D>& grad_u, const GridField<D>& density,
                                      const GridField<D>& warm_start,
                                      const ControlLawOptions& opts = {}) {
  return detail::solve_control_law_impl<D>(eval, t, grad_u, density, &warm_start, opts);
}

// Direct construction through the model's closed-form law summary.  Returns
// the same result shape as solve_control_law, with the summary recomputed
// from the constructed control and the defect measured the same way, so the
// two paths are comparable term by term.
template <std::size_t D>
ControlLawResult<D> closed_form_control_law(const HamiltonianEvaluator<D>& eval, double t,
                                            const GridField<D>& grad_u,
                                            const GridField<D>& density) {
  detail::check_law_inputs(grad_u, density, "closed_form_control_law");
  const LagrangianModel<D>& model = eval.model();
  if (!model.has_closed_form_summary())
    throw ParameterError("closed_form_control_law: " + model.name() +
                         " has no closed-form law summary");
  const LawSummary<D> s = model.closed_form_summary(t, grad_u, density);
  GridField<D> alpha = GridField<D>::zeros(density.grid, static_cast<int>(D));
  eval.best_response_field(t, grad_u, s, &alpha, nullptr);

  const LawSummary<D> recomputed = model.law_summary(density, alpha);
  GridField<D> br = GridField<D>::zeros(density.grid, static_cast<int>(D));
  eval.best_response_field(t, grad_u, recomputed, &br, nullptr);
  const double defect = detail::support_defect(density, alpha, br);
  return ControlLawResult<D>{std::move(alpha), recomputed, defect, 1};
}

// Moment and sup bounds on the control law in terms of the model's growth
// constant.  With q' the control-cost exponent, q its conjugate, and C the
// growth constant, a consistent law obeys
//
//   Lambda_{q'}^{q'} <= 4 C^2 + (q')^{q-1} (2C)^q / q * int |p|^q dm
//   Lambda_inf       <= C (1 + sup |p| + Lambda_{q'})
//
// so a violation flags either a wrong constant or an inconsistent law.
struct GrowthBoundReport {
  double lambda_qprime = 0.0;  // (int |alpha|^{q'} dm)^{1/q'}
  double lambda_sup = 0.0;     // sup |alpha| on the support
  double moment_value = 0.0;   // Lambda_{q'}^{q'}
  double moment_bound = 0.0;
  double sup_value = 0.0;  // Lambda_inf
  double sup_bound = 0.0;

  bool moment_ok() const { return moment_value <= moment_bound; }
  bool sup_ok() const { return sup_value <= sup_bound; }
  bool ok() const { return moment_ok() && sup_ok(); }
};

template <std::size_t D>
GrowthBoundReport check_growth_bounds(const LagrangianModel<D>& model,
                                      const GridField<D>& density, const GridField<D>& control,
                                      const GridField<D>& grad_u) {
  detail::check_law_inputs(grad_u, density, "check_growth_bounds");
  require_same_grid(control.grid, density.grid, "check_growth_bounds");
  if (control.components != static_cast<int>(D))
    throw ShapeError("check_growth_bounds: control needs d components");

  const double qp = model.exponent_qprime();
  const double q = conjugate_exponent(qp);
  const double c0 = model.growth_constant();

  GrowthBoundReport r;
  r.lambda_qprime = lambda_moment(density, control, qp);
  r.lambda_sup = lambda_sup(density, control);

  GridField<D> pq = GridField<D>::zeros(density.grid, 1);
  for (std::size_t j = 0; j < density.grid.num_nodes(); ++j)
    pq(j) = std::pow(norm<D>(grad_u.vec(j)), q);
  const double p_moment = integrate_scalar(pq, density);

  r.moment_value = std::pow(r.lambda_qprime, qp);
  r.moment_bound = 4.0 * c0 * c0 + std::pow(qp, q - 1.0) * std::pow(2.0 * c0, q) / q * p_moment;
  r.sup_value = r.lambda_sup;
  r.sup_bound = c0 * (1.0 + grad_u.max_norm() + r.lambda_qprime);
  return r;
}

}  // namespace mfgc
