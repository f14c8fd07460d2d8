#pragma once
// Change of variables for controlled dynamics dX = b(alpha) dt + noise, where
// the gain map b is an invertible function of the control. Rather than teach
// every layer about b, the problem is rewritten in the effective velocity
// beta = b(alpha): the running cost becomes
//
//   Lb(t, x, beta, mu) = L(t, x, b^{-1}(beta), mu),
//
// the Fokker–Planck drift is beta itself, and the Hamiltonian of the original
// problem, Hb(p) = sup_a { -p.b(a) - L(a) }, coincides with the conjugate of
// Lb. The solver then runs unchanged on the transformed model, and b^{-1}
// recovers the control afterwards. Law summaries are always computed from the
// recovered controls, so mean-field interactions see the true control law.
//
// Supported gain maps:
//   * IdentityDrift       b(a) = a, an exact passthrough (every delegated call
//                         forwards unchanged arguments, so results are bitwise
//                         identical to the untransformed model);
//   * ComponentScaleDrift b_i(a) = c_i a_i with c_i != 0; here the conjugates
//                         obey the exact identity Hb(p) = H(Db^T p);
//   * SaturatingDrift     b(a) = a (1+|a|^2)^{-s/2} with s in (0,1]: effort can
//                         grow without bound while the attainable speed
//                         saturates (at s = 1 the range is the open unit ball).
//
// The transform is only as well posed as the pair (L, b): if b grows faster
// than L can pay for, the effective cost is sublinear and the conjugate is
// infinite. The wrapper reports such velocities through an infinite cost
// value; minimizers reject them and the stalled best response surfaces as a
// NumericError rather than a silent wrong answer.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mfgc/conjugate.hpp"
#include "mfgc/errors.hpp"
#include "mfgc/grid.hpp"
#include "mfgc/models.hpp"

namespace mfgc {

// ---------------------------------------------------------------------------
// Invertible gain map alpha -> beta = b(alpha).
// ---------------------------------------------------------------------------
template <std::size_t D>
class DriftMap {
 public:
  virtual ~DriftMap() = default;

  virtual std::string name() const = 0;

  // Structure flags the transformed model keys its closed forms on. A linear
  // map has a constant jacobian, so momenta pull back independently of the
  // point and the conjugate identity Hb(p) = H(Db^T p) holds exactly.
  virtual bool is_identity() const { return false; }
  virtual bool linear() const { return false; }

  virtual Vec<D> apply(const Vec<D>& alpha) const = 0;

  // Inverse map; throws NumericError when beta lies outside the range of b.
  virtual Vec<D> invert(const Vec<D>& beta) const = 0;
  virtual bool in_range(const Vec<D>&) const { return true; }

  // Jacobian actions at a point: pullback(a, w) = Db(a)^T w and its inverse
  // transpose invert_pullback(a, w) = Db(a)^{-T} w. For linear maps the point
  // argument is ignored.
  virtual Vec<D> pullback(const Vec<D>& alpha, const Vec<D>& w) const = 0;
  virtual Vec<D> invert_pullback(const Vec<D>& alpha, const Vec<D>& w) const = 0;
};

template <std::size_t D>
class IdentityDrift final : public DriftMap<D> {
 public:
  std::string name() const override { return "identity_drift"; }
  bool is_identity() const override { return true; }
  bool linear() const override { return true; }
  Vec<D> apply(const Vec<D>& alpha) const override { return alpha; }
  Vec<D> invert(const Vec<D>& beta) const override { return beta; }
  Vec<D> pullback(const Vec<D>&, const Vec<D>& w) const override { return w; }
  Vec<D> invert_pullback(const Vec<D>&, const Vec<D>& w) const override { return w; }
};

template <std::size_t D>
class ComponentScaleDrift final : public DriftMap<D> {
 public:
  explicit ComponentScaleDrift(const Vec<D>& scale) : scale_(scale) {
    for (std::size_t i = 0; i < D; ++i)
      if (!(std::isfinite(scale_[i]) && scale_[i] != 0.0))
        throw ParameterError("ComponentScaleDrift: every scale must be finite and nonzero");
  }

  std::string name() const override { return "component_scale_drift"; }
  bool linear() const override { return true; }
  const Vec<D>& scale() const { return scale_; }

  Vec<D> apply(const Vec<D>& alpha) const override {
    Vec<D> b = alpha;
    for (std::size_t i = 0; i < D; ++i) b[i] *= scale_[i];
    return b;
  }
  Vec<D> invert(const Vec<D>& beta) const override {
    Vec<D> a = beta;
    for (std::size_t i = 0; i < D; ++i) a[i] /= scale_[i];
    return a;
  }
  // Db = diag(c) is symmetric, so the transpose action is the map itself.
  Vec<D> pullback(const Vec<D>&, const Vec<D>& w) const override { return apply(w); }
  Vec<D> invert_pullback(const Vec<D>&, const Vec<D>& w) const override { return invert(w); }

 private:
  Vec<D> scale_;
};

// Radial saturation: b(a) = a phi(|a|) with phi(r) = (1+r^2)^{-s/2}. The speed
// profile psi(r) = r phi(r) has psi'(r) = (1+r^2)^{-s/2-1} (1 + (1-s) r^2),
// strictly positive for s <= 1, so b is a diffeomorphism onto its range: all
// of R^d for s < 1 and the open unit ball for s = 1.
template <std::size_t D>
class SaturatingDrift final : public DriftMap<D> {
 public:
  explicit SaturatingDrift(double sat) : sat_(sat) {
    if (!(sat > 0 && sat <= 1))
      throw ParameterError("SaturatingDrift: saturation exponent must lie in (0, 1]");
  }

  std::string name() const override { return "saturating_drift"; }
  double saturation() const { return sat_; }

  double speed_profile(double r) const { return r * std::pow(1.0 + r * r, -0.5 * sat_); }
  double speed_profile_slope(double r) const {
    return std::pow(1.0 + r * r, -0.5 * sat_ - 1.0) * (1.0 + (1.0 - sat_) * r * r);
  }

  bool in_range(const Vec<D>& beta) const override {
    return sat_ < 1.0 || norm<D>(beta) < 1.0;
  }

  Vec<D> apply(const Vec<D>& alpha) const override {
    const double r = norm<D>(alpha);
    return vscale<D>(std::pow(1.0 + r * r, -0.5 * sat_), alpha);
  }

  Vec<D> invert(const Vec<D>& beta) const override {
    const double rho = norm<D>(beta);
    if (rho == 0.0) return Vec<D>{};
    if (!in_range(beta))
      throw NumericError("saturating drift: velocity outside the reachable ball",
                         std::vector<double>(beta.begin(), beta.end()), rho - 1.0, 0);
    double r;
    if (sat_ == 1.0) {
      // psi(r) = r / sqrt(1+r^2) inverts in closed form.
      r = rho / std::sqrt(1.0 - rho * rho);
    } else {
      // psi is strictly increasing and psi(r) <= r, so the root of
      // psi(r) = rho lies in [rho, hi] once psi(hi) clears the target.
      double lo = rho, hi = std::max(rho, 1.0);
      while (speed_profile(hi) < rho) hi *= 2.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (speed_profile(mid) < rho)
          lo = mid;
        else
          hi = mid;
        if (hi - lo <= 1e-16 * (1.0 + hi)) break;
      }
      r = 0.5 * (lo + hi);
      for (int it = 0; it < 4; ++it) {  // Newton polish, slope > 0
        const double f = speed_profile(r) - rho;
        const double df = speed_profile_slope(r);
        if (df <= 0) break;
        const double next = r - f / df;
        if (!(next >= lo && next <= hi)) break;
        r = next;
      }
    }
    return vscale<D>(r / rho, beta);
  }

  // Db(a) = phi I + (phi'(r)/r) a a^T with phi'(r)/r = -s (1+r^2)^{-s/2-1},
  // which is finite at r = 0 and keeps the matrix symmetric.
  Vec<D> pullback(const Vec<D>& alpha, const Vec<D>& w) const override {
    const double r2 = dot<D>(alpha, alpha);
    const double phi = std::pow(1.0 + r2, -0.5 * sat_);
    const double ratio = -sat_ * std::pow(1.0 + r2, -0.5 * sat_ - 1.0);
    return vadd<D>(vscale<D>(phi, w), vscale<D>(ratio * dot<D>(alpha, w), alpha));
  }

  // Db has eigenvalue psi'(r) along a and phi(r) on the orthogonal complement,
  // both positive, so the inverse transpose splits the same way.
  Vec<D> invert_pullback(const Vec<D>& alpha, const Vec<D>& w) const override {
    const double r2 = dot<D>(alpha, alpha);
    const double phi = std::pow(1.0 + r2, -0.5 * sat_);
    if (r2 == 0.0) return vscale<D>(1.0 / phi, w);
    const double radial = dot<D>(alpha, w) / r2;
    const Vec<D> tangent = vsub<D>(w, vscale<D>(radial, alpha));
    const double slope = speed_profile_slope(std::sqrt(r2));
    return vadd<D>(vscale<D>(1.0 / phi, tangent), vscale<D>(radial / slope, alpha));
  }

 private:
  double sat_;
};

// ---------------------------------------------------------------------------
// The transformed model: the base cost read through the gain map.
// ---------------------------------------------------------------------------
// The control variable of this model is the effective velocity beta. Law
// summaries are computed from the recovered controls b^{-1}(beta), so the
// mean-field statistics agree with the original problem. Growth bookkeeping
// (exponent, growth constant) stays with the underlying control variable:
// moment bounds of the recovered control law are the meaningful ones.
//
// Velocities outside the range of b carry infinite cost. The control gradient
// there is a steep outward surrogate; descent methods only ever accept
// finite-cost points, so the surrogate merely steers finite-difference probes
// back into the reachable set.
template <std::size_t D>
class DriftTransformedModel : public LagrangianModel<D> {
 public:
  DriftTransformedModel(std::shared_ptr<const LagrangianModel<D>> base,
                        std::shared_ptr<const DriftMap<D>> drift)
      : base_(std::move(base)), drift_(std::move(drift)) {
    if (!base_) throw ParameterError("DriftTransformedModel: base model is required");
    if (!drift_) throw ParameterError("DriftTransformedModel: drift map is required");
  }

  const LagrangianModel<D>& base() const { return *base_; }
  const DriftMap<D>& drift() const { return *drift_; }

  std::string name() const override { return base_->name() + " / " + drift_->name(); }
  double exponent_qprime() const override { return base_->exponent_qprime(); }
  double growth_constant() const override { return base_->growth_constant(); }
  SummaryKind summary_kind() const override { return base_->summary_kind(); }

  double lagrangian(double t, const Vec<D>& x, const Vec<D>& beta,
                    const LawSummary<D>& s) const override {
    if (!drift_->in_range(beta)) return std::numeric_limits<double>::infinity();
    return base_->lagrangian(t, x, drift_->invert(beta), s);
  }

  Vec<D> lagrangian_grad_control(double t, const Vec<D>& x, const Vec<D>& beta,
                                 const LawSummary<D>& s) const override {
    if (!drift_->in_range(beta)) {
      // Outside the range the cost is infinite; only unit-ball saturation can
      // reach here, so |beta| >= 1 and the outward direction is well defined.
      const double r = norm<D>(beta);
      return vscale<D>(1e12 * (1.0 + r) / r, beta);
    }
    const Vec<D> alpha = drift_->invert(beta);
    return drift_->invert_pullback(alpha, base_->lagrangian_grad_control(t, x, alpha, s));
  }

  bool has_grad_x() const override { return base_->has_grad_x(); }
  Vec<D> lagrangian_grad_x(double t, const Vec<D>& x, const Vec<D>& beta,
                           const LawSummary<D>& s) const override {
    return base_->lagrangian_grad_x(t, x, drift_->invert(beta), s);
  }

  // Statistics of the underlying control law. Every node is inverted, so a
  // hand-built field must stay inside the range of b even off support;
  // solver-produced fields are best responses and satisfy this construction.
  LawSummary<D> law_summary(const GridField<D>& m, const GridField<D>& beta) const override {
    require_same_grid(m.grid, beta.grid, "law_summary");
    GridField<D> recovered = beta;
    for (std::size_t j = 0; j < m.grid.num_nodes(); ++j)
      recovered.set_vec(j, drift_->invert(beta.vec(j)));
    return base_->law_summary(m, recovered);
  }

  // For linear maps the transformed best response is the base best response
  // at the pulled-back momentum, pushed forward: beta* = b(a*(Db^T p)).
  bool has_closed_form_control() const override {
    return drift_->linear() && base_->has_closed_form_control();
  }
  Vec<D> closed_form_control(double t, const Vec<D>& x, const Vec<D>& p,
                             const LawSummary<D>& s) const override {
    if (!has_closed_form_control())
      throw ParameterError(name() + ": no closed-form best response");
    return drift_->apply(base_->closed_form_control(t, x, drift_->pullback(Vec<D>{}, p), s));
  }

  bool has_closed_form_summary() const override {
    return drift_->linear() && base_->has_closed_form_summary();
  }
  LawSummary<D> closed_form_summary(double t, const GridField<D>& p,
                                    const GridField<D>& m) const override {
    if (!has_closed_form_summary())
      throw ParameterError(name() + ": no closed-form summary solve");
    GridField<D> pulled = p;
    for (std::size_t j = 0; j < m.grid.num_nodes(); ++j)
      pulled.set_vec(j, drift_->pullback(Vec<D>{}, p.vec(j)));
    return base_->closed_form_summary(t, pulled, m);
  }

  // The gap formula reads only the (alpha-space) summaries, which this model
  // already produces, so it passes through untouched.
  bool has_closed_form_gap() const override { return base_->has_closed_form_gap(); }
  double closed_form_gap(double t, const LawSummary<D>& s1,
                         const LawSummary<D>& s2) const override {
    return base_->closed_form_gap(t, s1, s2);
  }

 private:
  std::shared_ptr<const LagrangianModel<D>> base_;
  std::shared_ptr<const DriftMap<D>> drift_;
};

// ---------------------------------------------------------------------------
// Power cost with saturating dynamics, solved by a scalar root.
// ---------------------------------------------------------------------------
// The agent pays |alpha|^{q'}/q' while moving at b(alpha) with the radial
// saturation map. In the effective velocity the cost is convex (the effort
// radius is a convex increasing function of the speed), and the best response
// aligns against the momentum: with rho = |p| the optimal effort radius solves
//
//   tau^{q'-1} = rho psi'(tau),
//
// whose left side increases from 0 while the right side starts at rho and
// decreases, so the root is unique and bracketed by [0, rho^{1/(q'-1)}].
// The optimal velocity is beta* = -psi(tau) p / |p|.
template <std::size_t D>
class SaturatedPowerModel final : public DriftTransformedModel<D> {
 public:
  SaturatedPowerModel(double qprime, double sat)
      : DriftTransformedModel<D>(std::make_shared<PowerLagrangian<D>>(qprime),
                                 std::make_shared<SaturatingDrift<D>>(sat)),
        qprime_(qprime) {}

  std::string name() const override { return "saturated_power"; }

  bool has_closed_form_control() const override { return true; }
  Vec<D> closed_form_control(double, const Vec<D>&, const Vec<D>& p,
                             const LawSummary<D>&) const override {
    const double rho = norm<D>(p);
    if (rho == 0.0) return Vec<D>{};
    const auto& sat = static_cast<const SaturatingDrift<D>&>(this->drift());
    auto residual = [&](double tau) {
      return std::pow(tau, qprime_ - 1.0) - rho * sat.speed_profile_slope(tau);
    };
    double lo = 0.0, hi = std::pow(rho, 1.0 / (qprime_ - 1.0));
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (residual(mid) < 0)
        lo = mid;
      else
        hi = mid;
      if (hi - lo <= 1e-16 * (1.0 + hi)) break;
    }
    double tau = 0.5 * (lo + hi);
    for (int it = 0; it < 4; ++it) {  // Newton polish; both slope terms are >= 0
      const double s = sat.saturation();
      const double t2 = tau * tau;
      const double curvature = s * tau * std::pow(1.0 + t2, -0.5 * s - 2.0) *
                               (3.0 + (1.0 - s) * t2);
      const double df = (qprime_ - 1.0) * std::pow(tau, qprime_ - 2.0) + rho * curvature;
      if (!(df > 0)) break;
      const double next = tau - residual(tau) / df;
      if (!(next >= lo && next <= hi)) break;
      tau = next;
    }
    return this->drift().apply(vscale<D>(-tau / rho, p));
  }

 private:
  double qprime_;
};

// ---------------------------------------------------------------------------
// Recovery and consistency checks.
// ---------------------------------------------------------------------------

// Map a field of effective velocities back to the underlying controls.
template <std::size_t D>
inline GridField<D> recover_control(const DriftMap<D>& drift, const GridField<D>& beta) {
  if (beta.components != static_cast<int>(D))
    throw ShapeError("recover_control: velocity field needs d components");
  GridField<D> alpha = beta;
  for (std::size_t j = 0; j < beta.grid.num_nodes(); ++j)
    alpha.set_vec(j, drift.invert(beta.vec(j)));
  return alpha;
}

template <std::size_t D>
inline ControlLaw<D> recover_control_law(const DriftMap<D>& drift, const ControlLaw<D>& law) {
  return ControlLaw<D>(law.density, recover_control(drift, law.control));
}

template <std::size_t D>
inline std::vector<GridField<D>> recover_control_path(const DriftMap<D>& drift,
                                                      const std::vector<GridField<D>>& beta) {
  std::vector<GridField<D>> alpha;
  alpha.reserve(beta.size());
  for (const auto& field : beta) alpha.push_back(recover_control(drift, field));
  return alpha;
}

// Residuals tying a solved effective-velocity system back to the original
// control problem:
//   * roundtrip_gap     sup |b(b^{-1}(beta)) - beta| over the control path;
//   * stationarity_gap  sup over the support of |L_a(a) + Db(a)^T grad u|,
//                       the first-order condition in the original control;
//   * hamiltonian_gap   linear maps only: sup |Hb(grad u) - H(Db^T grad u)|,
//                       the exact conjugate identity (0 for nonlinear maps,
//                       where no such pointwise identity exists).
template <std::size_t D>
struct DriftEquivalence {
  double roundtrip_gap = 0;
  double stationarity_gap = 0;
  double hamiltonian_gap = 0;
};

template <std::size_t D>
inline DriftEquivalence<D> equivalence_check(const DriftTransformedModel<D>& model,
                                             const TimeGrid& time,
                                             const std::vector<GridField<D>>& value,
                                             const DensityPath<D>& density,
                                             const std::vector<GridField<D>>& control,
                                             const ConjugateOptions& opts = {}) {
  const std::size_t nodes = static_cast<std::size_t>(time.steps) + 1;
  if (value.size() != nodes || control.size() != nodes || density.slices.size() != nodes)
    throw ShapeError("equivalence_check: value, density, and control paths must cover every time node");

  const LagrangianModel<D>& base = model.base();
  const DriftMap<D>& drift = model.drift();
  HamiltonianEvaluator<D> base_eval(base, opts);
  HamiltonianEvaluator<D> full_eval(model, opts);

  DriftEquivalence<D> r;
  for (std::size_t n = 0; n < nodes; ++n) {
    const double t = time.node(static_cast<int>(n));
    const GridField<D>& beta = control[n];
    const GridField<D>& m = density[static_cast<int>(n)];
    require_same_grid(beta.grid, m.grid, "equivalence_check");
    const GridField<D> alpha = recover_control(drift, beta);
    const LawSummary<D> s = base.law_summary(m, alpha);
    const GridField<D> p = gradient_central(value[n]);

    for (std::size_t j = 0; j < m.grid.num_nodes(); ++j) {
      const Vec<D> a = alpha.vec(j);
      r.roundtrip_gap = std::max(r.roundtrip_gap, norm<D>(vsub<D>(drift.apply(a), beta.vec(j))));

      const Vec<D> x = m.grid.coord(j);
      const Vec<D> pj = p.vec(j);
      if (in_support(m, j)) {
        const Vec<D> foc = vadd<D>(base.lagrangian_grad_control(t, x, a, s),
                                   drift.pullback(a, pj));
        r.stationarity_gap = std::max(r.stationarity_gap, norm<D>(foc));
      }
      if (drift.linear()) {
        const double hb = full_eval.hamiltonian(t, x, pj, s);
        const double h = base_eval.hamiltonian(t, x, drift.pullback(Vec<D>{}, pj), s);
        r.hamiltonian_gap = std::max(r.hamiltonian_gap, std::abs(hb - h));
      }
    }
  }
  return r;
}

}  // namespace mfgc
