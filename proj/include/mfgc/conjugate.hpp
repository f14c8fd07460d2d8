#pragma once
// Hamiltonian evaluation by Legendre transform:
//
//   H(t,x,p,mu) = sup_a { -p.a - L(t,x,a,mu) } = -min_a { L(t,x,a,mu) + p.a },
//
// together with the best response a* (the minimizer), H_p = -a*, and the
// envelope H_x = -L_x(t,x,a*,mu). Models that carry a closed-form best
// response are evaluated directly; everything else goes through a damped
// Newton minimization of the strictly convex objective F(a) = L(a) + p.a
// (finite-difference Hessian assembled from the analytic gradient, gradient
// descent as the fallback when a Newton step fails to decrease F).

#include <algorithm>
#include <cmath>

#include "mfgc/errors.hpp"
#include "mfgc/grid.hpp"
#include "mfgc/models.hpp"

namespace mfgc {

struct ConjugateOptions {
  double gradient_tol = 1e-10;  // stop when |L_a(a) + p| drops below this
  int max_iterations = 200;
  bool force_numeric = false;  // ignore closed forms (used to cross-validate them)
};

template <std::size_t D>
struct BestResponse {
  Vec<D> control{};   // a*
  double value = 0;   // H = -(L(a*) + p.a*)
};

namespace detail {

// Solve (H + tau I) s = -g for the tiny systems that arise here (d <= 2).
template <std::size_t D>
inline bool solve_small(const Mat<D>& H, double tau, const Vec<D>& g, Vec<D>& s) {
  if constexpr (D == 1) {
    const double a = H[0][0] + tau;
    if (a <= 0) return false;
    s[0] = -g[0] / a;
    return true;
  } else {
    const double a = H[0][0] + tau, b = H[0][1], c = H[1][0], d = H[1][1] + tau;
    const double det = a * d - b * c;
    if (!(std::abs(det) > 0) || a <= 0 || a * d - b * c <= 0) return false;
    s[0] = (-g[0] * d + g[1] * b) / det;
    s[1] = (-g[1] * a + g[0] * c) / det;
    return true;
  }
}

}  // namespace detail

// Minimize F(a) = L(t,x,a,s) + p.a numerically. Throws NumericError (with the
// best iterate attached) if the gradient tolerance is not reached.
template <std::size_t D>
inline Vec<D> numeric_best_response(const LagrangianModel<D>& model, double t, const Vec<D>& x,
                                    const Vec<D>& p, const LawSummary<D>& s,
                                    const ConjugateOptions& opts = {}) {
  auto objective = [&](const Vec<D>& a) { return model.lagrangian(t, x, a, s) + dot<D>(p, a); };
  auto gradient = [&](const Vec<D>& a) {
    return vadd<D>(model.lagrangian_grad_control(t, x, a, s), p);
  };

  Vec<D> a{};  // cold start at rest
  double f = objective(a);
  Vec<D> g = gradient(a);

  for (int it = 0; it < opts.max_iterations; ++it) {
    const double gnorm = norm<D>(g);
    if (gnorm <= opts.gradient_tol) return a;

    // Finite-difference Hessian from the analytic gradient (central, then
    // symmetrized). The step scales with the iterate to stay meaningful both
    // near zero and far out.
    Mat<D> H{};
    const double delta = 1e-6 * (1.0 + norm<D>(a));
    for (std::size_t j = 0; j < D; ++j) {
      Vec<D> ap = a, am = a;
      ap[j] += delta;
      am[j] -= delta;
      const Vec<D> gp = gradient(ap);
      const Vec<D> gm = gradient(am);
      for (std::size_t i = 0; i < D; ++i) H[i][j] = (gp[i] - gm[i]) / (2.0 * delta);
    }
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = i + 1; j < D; ++j) {
        const double sym = 0.5 * (H[i][j] + H[j][i]);
        H[i][j] = H[j][i] = sym;
      }

    // Newton direction, regularizing until it is a descent direction.
    Vec<D> step{};
    bool have_direction = false;
    double tau = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < D; ++i) scale = std::max(scale, std::abs(H[i][i]));
    for (int reg = 0; reg < 12 && !have_direction; ++reg) {
      if (detail::solve_small<D>(H, tau, g, step) && dot<D>(step, g) < 0) {
        have_direction = true;
        break;
      }
      tau = (tau == 0.0) ? std::max(1e-8, 1e-8 * scale) : 2.0 * tau;
    }
    if (!have_direction) step = vscale<D>(-1.0 / std::max(1.0, gnorm), g);  // plain descent

    // Backtracking line search (Armijo). A candidate that rounds back onto
    // the current iterate is no move at all (and shorter steps only collapse
    // harder), so that ends the search.
    const double slope = dot<D>(step, g);
    double tstep = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Vec<D> cand = vadd<D>(a, vscale<D>(tstep, step));
      if (cand == a) break;
      const double fc = objective(cand);
      if (std::isfinite(fc) && fc <= f + 1e-4 * tstep * slope) {
        a = cand;
        f = fc;
        g = gradient(a);
        moved = true;
        break;
      }
      tstep *= 0.5;
    }
    if (!moved) {
      // Near the minimum the remaining decrease of F sinks below the rounding
      // of F itself and Armijo can no longer certify progress. Newton still
      // contracts the gradient quadratically there, so accept a full step
      // that visibly shrinks |g|.
      const Vec<D> cand = vadd<D>(a, step);
      const double fc = objective(cand);
      if (std::isfinite(fc)) {
        const Vec<D> gc = gradient(cand);
        if (norm<D>(gc) < 0.5 * gnorm) {
          a = cand;
          f = fc;
          g = gc;
          moved = true;
        }
      }
    }
    if (!moved) {
      // Newton direction failed outright; try a short gradient step before
      // giving up on this iteration.
      const Vec<D> dir = vscale<D>(-1.0, g);
      tstep = 1.0 / std::max(1.0, gnorm);
      for (int ls = 0; ls < 40; ++ls) {
        const Vec<D> cand = vadd<D>(a, vscale<D>(tstep, dir));
        if (cand == a) break;
        const double fc = objective(cand);
        if (std::isfinite(fc) && fc < f) {
          a = cand;
          f = fc;
          g = gradient(a);
          moved = true;
          break;
        }
        tstep *= 0.5;
      }
    }
    if (!moved) break;  // fully stalled
  }

  if (norm<D>(g) <= opts.gradient_tol) return a;
  std::vector<double> best(a.begin(), a.end());
  throw NumericError(model.name() + ": best-response minimization stalled", best, norm<D>(g),
                     opts.max_iterations);
}

// ---------------------------------------------------------------------------
// Evaluator facade used by the PDE steppers and the fixed-point layers.
// ---------------------------------------------------------------------------
template <std::size_t D>
class HamiltonianEvaluator {
 public:
  explicit HamiltonianEvaluator(const LagrangianModel<D>& model, ConjugateOptions opts = {})
      : model_(model), opts_(opts) {}

  const LagrangianModel<D>& model() const { return model_; }
  const ConjugateOptions& options() const { return opts_; }

  Vec<D> control(double t, const Vec<D>& x, const Vec<D>& p, const LawSummary<D>& s) const {
    if (!opts_.force_numeric && model_.has_closed_form_control())
      return model_.closed_form_control(t, x, p, s);
    return numeric_best_response(model_, t, x, p, s, opts_);
  }

  BestResponse<D> best_response(double t, const Vec<D>& x, const Vec<D>& p,
                                const LawSummary<D>& s) const {
    BestResponse<D> r;
    r.control = control(t, x, p, s);
    r.value = -(model_.lagrangian(t, x, r.control, s) + dot<D>(p, r.control));
    return r;
  }

  double hamiltonian(double t, const Vec<D>& x, const Vec<D>& p, const LawSummary<D>& s) const {
    return best_response(t, x, p, s).value;
  }

  // H_p = -a*.
  Vec<D> grad_p(double t, const Vec<D>& x, const Vec<D>& p, const LawSummary<D>& s) const {
    return vscale<D>(-1.0, control(t, x, p, s));
  }

  // Envelope identity: H_x = -L_x evaluated at the best response.
  Vec<D> grad_x(double t, const Vec<D>& x, const Vec<D>& p, const LawSummary<D>& s) const {
    const Vec<D> a = control(t, x, p, s);
    return vscale<D>(-1.0, model_.lagrangian_grad_x(t, x, a, s));
  }

  // Nodewise application over a whole momentum field: fills the control
  // field a*(x) and optionally the Hamiltonian values H(t, x, p(x), s).
  void best_response_field(double t, const GridField<D>& p, const LawSummary<D>& s,
                           GridField<D>* control_out, GridField<D>* value_out) const {
    const auto& g = p.grid;
    if (p.components != static_cast<int>(D)) throw ShapeError("best_response_field: momentum needs d components");
    for (std::size_t j = 0; j < g.num_nodes(); ++j) {
      const auto r = best_response(t, g.coord(j), p.vec(j), s);
      if (control_out) control_out->set_vec(j, r.control);
      if (value_out) (*value_out)(j) = r.value;
    }
  }

 private:
  const LagrangianModel<D>& model_;
  ConjugateOptions opts_;
};

}  // namespace mfgc
