#pragma once
// Control-cost models. A model supplies the running cost L(t, x, alpha, mu)
// where mu — the joint law of state and control — enters only through a small
// vector of summary statistics (its mean control, a kernel-weighted mean, or
// a phi-weighted moment). That finite summary is what the per-time-node fixed
// point iterates on, so the interface is built around it:
//
//   * law_summary(m, alpha) evaluates the statistics of the graph measure
//     (Id, alpha)#m by quadrature;
//   * lagrangian / lagrangian_grad_control evaluate L and its control
//     gradient at a node given the current summary;
//   * optional closed forms (best response, self-consistent summary,
//     monotonicity gap) give independent oracles that the generic numeric
//     paths are tested against.
//
// Sign conventions: the Hamiltonian is H(t,x,p,mu) = sup_a { -p.a - L },
// so the best response minimizes L(a) + p.a, the optimal control satisfies
// p = -L_alpha(a*), and the optimal drift is a* = -H_p.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>

#include "mfgc/errors.hpp"
#include "mfgc/grid.hpp"

namespace mfgc {

// Which statistic of the joint law the cost actually reads.
enum class SummaryKind {
  none,           // cost ignores the law (benchmark models)
  mean_control,   // mean of alpha
  weighted_mean,  // kernel-weighted mean V with normalizer Z
  phi_weighted,   // y = ∫ phi(x) alpha dmu, consumed through a price map Psi
};

template <std::size_t D>
struct LawSummary {
  SummaryKind kind = SummaryKind::none;
  Vec<D> mean_alpha{};     // ∫ alpha dmu (filled by every model)
  Vec<D> weighted_mean{};  // V = (1/Z) ∫ alpha k(x) dmu
  double normalizer = 0;   // Z (depends on the density only)
  Vec<D> phi_weighted{};   // y = ∫ phi(x) alpha dmu

  // Rescale the control statistics by `factor` (the density-only normalizer
  // is untouched). This is how the homotopy reinterprets a summary of the
  // scaled system as a summary for the base cost.
  LawSummary scaled_controls(double factor) const {
    LawSummary s = *this;
    s.mean_alpha = vscale<D>(factor, mean_alpha);
    s.weighted_mean = vscale<D>(factor, weighted_mean);
    s.phi_weighted = vscale<D>(factor, phi_weighted);
    return s;
  }
};

// Graph measure (Id, alpha)#m at one time node: a density plus the control
// field realizing the conditional law.
template <std::size_t D>
struct ControlLaw {
  GridField<D> density;  // scalar, nonnegative
  GridField<D> control;  // d components

  ControlLaw() = default;
  ControlLaw(const GridField<D>& m, const GridField<D>& a) : density(m), control(a) {
    require_same_grid(m.grid, a.grid, "ControlLaw");
    if (!m.is_scalar()) throw ShapeError("ControlLaw: density must be scalar");
    if (a.components != static_cast<int>(D)) throw ShapeError("ControlLaw: control must have d components");
  }
  static ControlLaw rest(const TorusGrid<D>& g, const GridField<D>& m) {
    ControlLaw law;
    law.density = m;
    law.control = GridField<D>(g, D);
    return law;
  }
};

// L^{q'}(m) moment of the control field: ( ∫ |alpha|^{q'} dm )^{1/q'}.
template <std::size_t D>
inline double lambda_moment(const GridField<D>& m, const GridField<D>& alpha, double qprime) {
  require_same_grid(m.grid, alpha.grid, "lambda_moment");
  if (!(qprime >= 1)) throw ParameterError("lambda_moment: exponent must be >= 1");
  double acc = 0;
  for (std::size_t j = 0; j < m.grid.num_nodes(); ++j)
    acc += std::pow(norm<D>(alpha.vec(j)), qprime) * m(j);
  return std::pow(acc * cell_volume(m.grid), 1.0 / qprime);
}

// Sup of |alpha| over the numerical support of m.
template <std::size_t D>
inline double lambda_sup(const GridField<D>& m, const GridField<D>& alpha) {
  require_same_grid(m.grid, alpha.grid, "lambda_sup");
  double s = 0;
  for (std::size_t j = 0; j < m.grid.num_nodes(); ++j)
    if (in_support(m, j)) s = std::max(s, norm<D>(alpha.vec(j)));
  return s;
}

// Conjugate exponent: 1/q + 1/q' = 1.
inline double conjugate_exponent(double qprime) {
  if (!(qprime > 1)) throw ParameterError("conjugate_exponent: exponent must be > 1");
  return qprime / (qprime - 1.0);
}

// ---------------------------------------------------------------------------
// Abstract model interface.
// ---------------------------------------------------------------------------
template <std::size_t D>
class LagrangianModel {
 public:
  virtual ~LagrangianModel() = default;

  virtual std::string name() const = 0;

  // Growth exponent q' of L in the control, and the constant C0 of the
  // growth/coercivity envelope (see each model for its derivation).
  virtual double exponent_qprime() const = 0;
  virtual double growth_constant() const = 0;

  virtual SummaryKind summary_kind() const = 0;

  virtual double lagrangian(double t, const Vec<D>& x, const Vec<D>& alpha,
                            const LawSummary<D>& s) const = 0;
  virtual Vec<D> lagrangian_grad_control(double t, const Vec<D>& x, const Vec<D>& alpha,
                                         const LawSummary<D>& s) const = 0;

  // x-gradient of L, needed only by the envelope identity H_x = -L_x;
  // models without an analytic expression simply do not claim it.
  virtual bool has_grad_x() const { return false; }
  virtual Vec<D> lagrangian_grad_x(double, const Vec<D>&, const Vec<D>&,
                                   const LawSummary<D>&) const {
    throw ParameterError(name() + ": x-gradient of the cost is not available");
  }

  // Summary statistics of the graph measure (Id, alpha)#m.
  virtual LawSummary<D> law_summary(const GridField<D>& m, const GridField<D>& alpha) const {
    require_same_grid(m.grid, alpha.grid, "law_summary");
    LawSummary<D> s;
    s.kind = summary_kind();
    GridField<D> weighted = alpha;
    for (std::size_t j = 0; j < m.grid.num_nodes(); ++j)
      for (std::size_t c = 0; c < D; ++c) weighted(j, c) *= m(j);
    s.mean_alpha = integrate(weighted);
    return s;
  }

  // Best response a*(t,x,p,s) = argmin_a { L(t,x,a,s) + p.a } in closed form.
  virtual bool has_closed_form_control() const { return false; }
  virtual Vec<D> closed_form_control(double, const Vec<D>&, const Vec<D>&,
                                     const LawSummary<D>&) const {
    throw ParameterError(name() + ": no closed-form best response");
  }

  // Self-consistent summary for a given momentum field p and density m:
  // the summary of the law induced by alpha(x) = a*(t, x, p(x), s) solved
  // for s. Used as an independent oracle against the iterative path.
  virtual bool has_closed_form_summary() const { return false; }
  virtual LawSummary<D> closed_form_summary(double, const GridField<D>&,
                                            const GridField<D>&) const {
    throw ParameterError(name() + ": no closed-form summary solve");
  }

  // Closed-form monotonicity gap ∫ (L(.,mu1) - L(.,mu2)) d(mu1 - mu2)
  // expressed through the two summaries, when the structure allows it.
  virtual bool has_closed_form_gap() const { return false; }
  virtual double closed_form_gap(double, const LawSummary<D>&, const LawSummary<D>&) const {
    throw ParameterError(name() + ": no closed-form monotonicity gap");
  }
};

// Generic monotonicity gap by quadrature of the defining integral
//   gap = ∫ [L(t,x,a,s1) - L(t,x,a,s2)] d(mu1 - mu2).
// Nonnegative for monotone costs; the sign probe for uniqueness reads this.
template <std::size_t D>
inline double monotonicity_gap(const LagrangianModel<D>& model, double t,
                               const ControlLaw<D>& one, const ControlLaw<D>& two) {
  require_same_grid(one.density.grid, two.density.grid, "monotonicity_gap");
  const auto s1 = model.law_summary(one.density, one.control);
  const auto s2 = model.law_summary(two.density, two.control);
  const auto& g = one.density.grid;
  double acc = 0;
  for (std::size_t j = 0; j < g.num_nodes(); ++j) {
    const Vec<D> x = g.coord(j);
    const Vec<D> a1 = one.control.vec(j);
    const Vec<D> a2 = two.control.vec(j);
    acc += (model.lagrangian(t, x, a1, s1) - model.lagrangian(t, x, a1, s2)) * one.density(j);
    acc -= (model.lagrangian(t, x, a2, s1) - model.lagrangian(t, x, a2, s2)) * two.density(j);
  }
  return acc * cell_volume(g);
}

// ---------------------------------------------------------------------------
// Exhaustible-resource market, linearized price impact (d = 1).
//
//   L(a, mu) = a^2 + (eps/(1+eps)) a abar - a/(1+eps),  abar = ∫ a' dmu.
//
// Closed forms: best response a* = (1/(1+eps) - (eps/(1+eps)) abar - p) / 2,
// self-consistent mean abar = (1 - (1+eps) G) / (2 + 3 eps) with G = ∫ p dm,
// monotonicity gap (eps/(1+eps)) (abar1 - abar2)^2.
// ---------------------------------------------------------------------------
class ExhaustibleLinear final : public LagrangianModel<1> {
 public:
  explicit ExhaustibleLinear(double eps) : eps_(eps) {
    if (!(eps >= 0)) throw ParameterError("ExhaustibleLinear: eps must be >= 0");
  }

  std::string name() const override { return "exhaustible_linear"; }
  double exponent_qprime() const override { return 2.0; }
  // Envelope constant: |a*| <= (1 + |abar| + |p|)/2 and the quadratic term
  // dominates with unit coefficient, so C0 = 2 covers both the coercivity
  // lower bound and the moment estimates with room to spare.
  double growth_constant() const override { return 2.0; }
  SummaryKind summary_kind() const override { return SummaryKind::mean_control; }

  double epsilon() const { return eps_; }
  double impact_coeff() const { return eps_ / (1.0 + eps_); }

  double lagrangian(double, const Vec<1>&, const Vec<1>& a,
                    const LawSummary<1>& s) const override {
    return a[0] * a[0] + impact_coeff() * a[0] * s.mean_alpha[0] - a[0] / (1.0 + eps_);
  }

  Vec<1> lagrangian_grad_control(double, const Vec<1>&, const Vec<1>& a,
                                 const LawSummary<1>& s) const override {
    return {2.0 * a[0] + impact_coeff() * s.mean_alpha[0] - 1.0 / (1.0 + eps_)};
  }

  bool has_grad_x() const override { return true; }
  Vec<1> lagrangian_grad_x(double, const Vec<1>&, const Vec<1>&,
                           const LawSummary<1>&) const override {
    return {0.0};
  }

  bool has_closed_form_control() const override { return true; }
  Vec<1> closed_form_control(double, const Vec<1>&, const Vec<1>& p,
                             const LawSummary<1>& s) const override {
    return {0.5 * (1.0 / (1.0 + eps_) - impact_coeff() * s.mean_alpha[0] - p[0])};
  }

  bool has_closed_form_summary() const override { return true; }
  LawSummary<1> closed_form_summary(double, const GridField<1>& p,
                                    const GridField<1>& m) const override {
    const double G = integrate(p, m)[0];
    LawSummary<1> s;
    s.kind = SummaryKind::mean_control;
    s.mean_alpha = {(1.0 - (1.0 + eps_) * G) / (2.0 + 3.0 * eps_)};
    return s;
  }

  bool has_closed_form_gap() const override { return true; }
  double closed_form_gap(double, const LawSummary<1>& s1, const LawSummary<1>& s2) const override {
    const double d = s1.mean_alpha[0] - s2.mean_alpha[0];
    return impact_coeff() * d * d;
  }

 private:
  double eps_;
};

// ---------------------------------------------------------------------------
// Exhaustible-resource market, general price map:
//
//   L(t,x,a,mu) = b0 |a|^{q'}/q' + phi(x) a . Psi(t, y),  y = ∫ phi(x') a' dmu,
//
// with phi a matrix-valued weight on the torus and Psi monotone in y (that
// monotonicity is exactly what makes the gap (Psi(y1)-Psi(y2)).(y1-y2)
// nonnegative). The shipped default is Psi(t, y) = y + c |y|^{q'-2} y.
// With d = 1, phi = 1, b0 = 2, q' = 2 and the affine map
// Psi(y) = (eps/(1+eps)) y - 1/(1+eps) this reduces to ExhaustibleLinear.
// ---------------------------------------------------------------------------
template <std::size_t D>
class ExhaustibleGeneral : public LagrangianModel<D> {
 public:
  using PhiFn = std::function<Mat<D>(Vec<D>)>;
  using PriceFn = std::function<Vec<D>(double, Vec<D>)>;

  ExhaustibleGeneral(double qprime, double base_coeff, PhiFn phi, PriceFn psi,
                     double growth_c0 = 4.0)
      : qprime_(qprime), b0_(base_coeff), phi_(std::move(phi)), psi_(std::move(psi)), c0_(growth_c0) {
    if (!(qprime > 1)) throw ParameterError("ExhaustibleGeneral: q' must be > 1");
    if (!(base_coeff > 0)) throw ParameterError("ExhaustibleGeneral: base coefficient must be > 0");
    if (!phi_) throw ParameterError("ExhaustibleGeneral: phi weight is required");
    if (!psi_) throw ParameterError("ExhaustibleGeneral: price map is required");
  }

  // Default monotone price map y -> y + c |y|^{q'-2} y.
  static PriceFn power_price(double c, double qprime) {
    return [c, qprime](double, Vec<D> y) {
      const double r = norm<D>(y);
      Vec<D> out = y;
      if (r > 0) {
        const double amp = 1.0 + c * std::pow(r, qprime - 2.0);
        out = vscale<D>(amp, y);
      }
      return out;
    };
  }

  static PhiFn identity_weight() {
    return [](Vec<D>) {
      Mat<D> id{};
      for (std::size_t i = 0; i < D; ++i) id[i][i] = 1.0;
      return id;
    };
  }

  std::string name() const override { return "exhaustible_general"; }
  double exponent_qprime() const override { return qprime_; }
  double growth_constant() const override { return c0_; }
  SummaryKind summary_kind() const override { return SummaryKind::phi_weighted; }

  Vec<D> price(double t, const LawSummary<D>& s) const { return psi_(t, s.phi_weighted); }

  double lagrangian(double t, const Vec<D>& x, const Vec<D>& a,
                    const LawSummary<D>& s) const override {
    const double r = norm<D>(a);
    const Vec<D> P = price(t, s);
    return b0_ * std::pow(r, qprime_) / qprime_ + dot<D>(matvec(phi_(x), a), P);
  }

  Vec<D> lagrangian_grad_control(double t, const Vec<D>& x, const Vec<D>& a,
                                 const LawSummary<D>& s) const override {
    const double r = norm<D>(a);
    Vec<D> g = matvec_t(phi_(x), price(t, s));
    if (r > 0) g = vadd<D>(g, vscale<D>(b0_ * std::pow(r, qprime_ - 2.0), a));
    return g;
  }

  LawSummary<D> law_summary(const GridField<D>& m, const GridField<D>& alpha) const override {
    LawSummary<D> s = LagrangianModel<D>::law_summary(m, alpha);
    const auto& g = m.grid;
    Vec<D> y{};
    for (std::size_t j = 0; j < g.num_nodes(); ++j) {
      const Vec<D> wa = matvec(phi_(g.coord(j)), alpha.vec(j));
      for (std::size_t c = 0; c < D; ++c) y[c] += wa[c] * m(j);
    }
    s.phi_weighted = vscale<D>(cell_volume(g), y);
    return s;
  }

  // Best response: b0 |a|^{q'-2} a = -(p + phi^T P), solved radially.
  bool has_closed_form_control() const override { return true; }
  Vec<D> closed_form_control(double t, const Vec<D>& x, const Vec<D>& p,
                             const LawSummary<D>& s) const override {
    const Vec<D> w = vscale<D>(-1.0, vadd<D>(p, matvec_t(phi_(x), price(t, s))));
    const double r = norm<D>(w);
    if (r == 0) return Vec<D>{};
    const double len = std::pow(r / b0_, 1.0 / (qprime_ - 1.0));
    return vscale<D>(len / r, w);
  }

  bool has_closed_form_gap() const override { return true; }
  double closed_form_gap(double t, const LawSummary<D>& s1, const LawSummary<D>& s2) const override {
    const Vec<D> dP = vsub<D>(psi_(t, s1.phi_weighted), psi_(t, s2.phi_weighted));
    const Vec<D> dy = vsub<D>(s1.phi_weighted, s2.phi_weighted);
    return dot<D>(dP, dy);
  }

 private:
  double qprime_;
  double b0_;
  PhiFn phi_;
  PriceFn psi_;
  double c0_;
};

// ---------------------------------------------------------------------------
// Crowd motion with alignment to the kernel-weighted mean velocity:
//
//   L(a, mu) = (blend/2) |a + lambda V|^2 + ((1-blend)/a') |a|^{a'},
//   V = (1/Z) ∫ a k(x) dmu,  Z = ( ∫ k^{q1} dmu )^{1/q1}  (Z = 0 means V = 0).
//
// The normalizer Z depends on the density only, so V is linear in the control
// marginal. q1 = inf takes the max of k over the numerical support.
// Not monotone in general (the gap theta_blend * lambda * (V1-V2).(abar1-abar2)
// has no sign), which is precisely what the uniqueness probe is for; with
// lambda = 0 the coupling vanishes and the gap is identically zero.
// ---------------------------------------------------------------------------
template <std::size_t D>
class CrowdMotion : public LagrangianModel<D> {
 public:
  using KernelFn = std::function<double(Vec<D>)>;

  CrowdMotion(double blend, double lambda, double apower, double q1, KernelFn kernel)
      : blend_(blend), lambda_(lambda), apower_(apower), q1_(q1), kernel_(std::move(kernel)) {
    if (!(blend >= 0 && blend <= 1)) throw ParameterError("CrowdMotion: blend must be in [0,1]");
    if (!(lambda >= 0)) throw ParameterError("CrowdMotion: lambda must be >= 0");
    if (!(apower > 1)) throw ParameterError("CrowdMotion: power exponent must be > 1");
    const double q = conjugate_exponent(exponent_qprime());
    if (!(q1 >= q)) throw ParameterError("CrowdMotion: q1 must be >= the conjugate exponent");
    if (!kernel_) throw ParameterError("CrowdMotion: kernel is required");
  }

  std::string name() const override { return "crowd_motion"; }

  // Growth exponent: with any quadratic weight the cost grows at least
  // quadratically, so q' = max(2, a'); the pure power case keeps a'.
  double exponent_qprime() const override {
    return blend_ > 0 ? std::max(2.0, apower_) : apower_;
  }

  // Envelope constant, valid for blend > 0 (and for blend = 0 with a' >= 2):
  // |a*| <= |p| / blend + lambda |V| and |V| <= Lambda_{q'}, so
  // C0 = max(2, 1/blend, lambda, a') covers the sup bound; the moment bound
  // follows from the same pointwise estimate.
  double growth_constant() const override {
    double c = std::max(2.0, std::max(lambda_, apower_));
    if (blend_ > 0) c = std::max(c, 1.0 / blend_);
    return c;
  }

  SummaryKind summary_kind() const override { return SummaryKind::weighted_mean; }

  double blend() const { return blend_; }
  double lambda() const { return lambda_; }
  double apower() const { return apower_; }

  double lagrangian(double, const Vec<D>&, const Vec<D>& a,
                    const LawSummary<D>& s) const override {
    const Vec<D> shifted = vadd<D>(a, vscale<D>(lambda_, s.weighted_mean));
    const double r = norm<D>(a);
    return 0.5 * blend_ * dot<D>(shifted, shifted) +
           (1.0 - blend_) * std::pow(r, apower_) / apower_;
  }

  Vec<D> lagrangian_grad_control(double, const Vec<D>&, const Vec<D>& a,
                                 const LawSummary<D>& s) const override {
    Vec<D> g = vscale<D>(blend_, vadd<D>(a, vscale<D>(lambda_, s.weighted_mean)));
    const double r = norm<D>(a);
    if (r > 0) g = vadd<D>(g, vscale<D>((1.0 - blend_) * std::pow(r, apower_ - 2.0), a));
    return g;
  }

  bool has_grad_x() const override { return true; }
  Vec<D> lagrangian_grad_x(double, const Vec<D>&, const Vec<D>&,
                           const LawSummary<D>&) const override {
    return Vec<D>{};
  }

  LawSummary<D> law_summary(const GridField<D>& m, const GridField<D>& alpha) const override {
    LawSummary<D> s = LagrangianModel<D>::law_summary(m, alpha);
    const auto& g = m.grid;
    // Z from the density alone.
    double Z = 0;
    if (std::isinf(q1_)) {
      for (std::size_t j = 0; j < g.num_nodes(); ++j)
        if (in_support(m, j)) Z = std::max(Z, kernel_(g.coord(j)));
    } else {
      double acc = 0;
      for (std::size_t j = 0; j < g.num_nodes(); ++j)
        acc += std::pow(kernel_(g.coord(j)), q1_) * m(j);
      Z = std::pow(acc * cell_volume(g), 1.0 / q1_);
    }
    s.normalizer = Z;
    // Weighted mean.
    Vec<D> w{};
    for (std::size_t j = 0; j < g.num_nodes(); ++j) {
      const double kj = kernel_(g.coord(j)) * m(j);
      for (std::size_t c = 0; c < D; ++c) w[c] += alpha(j, c) * kj;
    }
    s.weighted_mean = Z > 0 ? vscale<D>(cell_volume(g) / Z, w) : Vec<D>{};
    return s;
  }

  // Best response: a (blend + (1-blend) |a|^{a'-2}) = -(p + blend lambda V).
  // The radial profile r -> blend r + (1-blend) r^{a'-1} is strictly
  // increasing, so the magnitude is a monotone scalar root.
  bool has_closed_form_control() const override { return true; }
  Vec<D> closed_form_control(double, const Vec<D>&, const Vec<D>& p,
                             const LawSummary<D>& s) const override {
    const Vec<D> w =
        vscale<D>(-1.0, vadd<D>(p, vscale<D>(blend_ * lambda_, s.weighted_mean)));
    const double target = norm<D>(w);
    if (target == 0) return Vec<D>{};
    const double r = radial_magnitude(target);
    return vscale<D>(r / target, w);
  }

  // Self-consistent summary for a' = 2 (then a* = -(p + blend lambda V) and
  // V solves a linear equation):  V = -∫ p k dm / (Z + blend lambda K).
  bool has_closed_form_summary() const override { return apower_ == 2.0; }
  LawSummary<D> closed_form_summary(double, const GridField<D>& p,
                                    const GridField<D>& m) const override {
    if (apower_ != 2.0)
      throw ParameterError("CrowdMotion: closed-form summary needs a' = 2");
    LawSummary<D> s = law_summary(m, GridField<D>(m.grid, D));
    const auto& g = m.grid;
    Vec<D> pk{};
    double K = 0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j) {
      const double kj = kernel_(g.coord(j)) * m(j);
      K += kj;
      for (std::size_t c = 0; c < D; ++c) pk[c] += p(j, c) * kj;
    }
    K *= cell_volume(g);
    pk = vscale<D>(cell_volume(g), pk);
    const double denom = s.normalizer + blend_ * lambda_ * K;
    s.weighted_mean = denom > 0 ? vscale<D>(-1.0 / denom, pk) : Vec<D>{};
    // Mean control: a* = -(p + blend lambda V) integrated against m.
    const Vec<D> pmean = integrate(p, m);
    s.mean_alpha =
        vscale<D>(-1.0, vadd<D>(pmean, vscale<D>(blend_ * lambda_, s.weighted_mean)));
    return s;
  }

  bool has_closed_form_gap() const override { return true; }
  double closed_form_gap(double, const LawSummary<D>& s1, const LawSummary<D>& s2) const override {
    // The |V|^2 terms integrate to zero against d(mu1 - mu2); what survives
    // is blend * lambda * (V1 - V2).(abar1 - abar2).
    const Vec<D> dV = vsub<D>(s1.weighted_mean, s2.weighted_mean);
    const Vec<D> da = vsub<D>(s1.mean_alpha, s2.mean_alpha);
    return blend_ * lambda_ * dot<D>(dV, da);
  }

 private:
  // Solve blend r + (1-blend) r^{a'-1} = target for r >= 0 by bisection with
  // Newton polish; the profile is strictly increasing for a' > 1.
  double radial_magnitude(double target) const {
    if (blend_ == 1.0 || apower_ == 2.0) return target;  // profile is the identity
    auto profile = [&](double r) {
      return blend_ * r + (1.0 - blend_) * std::pow(r, apower_ - 1.0);
    };
    double lo = 0.0;
    double hi = std::max(1.0, target);
    if (blend_ > 0) hi = std::max(hi, target / blend_);
    hi = std::max(hi, std::pow(target / std::max(1.0 - blend_, 1e-300), 1.0 / (apower_ - 1.0)));
    while (profile(hi) < target) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (profile(mid) < target)
        lo = mid;
      else
        hi = mid;
      if (hi - lo <= 1e-15 * (1.0 + hi)) break;
    }
    double r = 0.5 * (lo + hi);
    for (int it = 0; it < 4; ++it) {  // Newton polish, derivative > 0
      const double f = profile(r) - target;
      const double df = blend_ + (1.0 - blend_) * (apower_ - 1.0) *
                                     (r > 0 ? std::pow(r, apower_ - 2.0) : 0.0);
      if (df <= 0) break;
      const double step = f / df;
      const double next = r - step;
      if (!(next >= lo && next <= hi)) break;
      r = next;
    }
    return r;
  }

  double blend_;
  double lambda_;
  double apower_;
  double q1_;
  KernelFn kernel_;
};

// ---------------------------------------------------------------------------
// Power-cost benchmark with a target momentum field (mean-field free):
//
//   L(x, a) = |a|^{q'}/q' - a . pbar(x)
//   H(x, p) = |p - pbar(x)|^q / q,  a* = |w|^{q-2} w with w = pbar - p.
//
// This is the standard test bed for the conjugate machinery because every
// quantity has a closed form for any q' > 1.
// ---------------------------------------------------------------------------
template <std::size_t D>
class PowerLagrangian : public LagrangianModel<D> {
 public:
  using FieldFn = std::function<Vec<D>(Vec<D>)>;
  using JacFn = std::function<Mat<D>(Vec<D>)>;

  explicit PowerLagrangian(double qprime, FieldFn pbar = nullptr, JacFn pbar_jacobian = nullptr,
                           double pbar_bound = 1.0)
      : qprime_(qprime), pbar_(std::move(pbar)), jac_(std::move(pbar_jacobian)), pbar_bound_(pbar_bound) {
    if (!(qprime > 1)) throw ParameterError("PowerLagrangian: q' must be > 1");
  }

  std::string name() const override { return "power_benchmark"; }
  double exponent_qprime() const override { return qprime_; }
  double growth_constant() const override {
    return std::max({2.0, qprime_, 2.0 * pbar_bound_});
  }
  SummaryKind summary_kind() const override { return SummaryKind::none; }

  Vec<D> target(const Vec<D>& x) const { return pbar_ ? pbar_(x) : Vec<D>{}; }

  double lagrangian(double, const Vec<D>& x, const Vec<D>& a,
                    const LawSummary<D>&) const override {
    const double r = norm<D>(a);
    return std::pow(r, qprime_) / qprime_ - dot<D>(a, target(x));
  }

  Vec<D> lagrangian_grad_control(double, const Vec<D>& x, const Vec<D>& a,
                                 const LawSummary<D>&) const override {
    const double r = norm<D>(a);
    Vec<D> g = vscale<D>(-1.0, target(x));
    if (r > 0) g = vadd<D>(g, vscale<D>(std::pow(r, qprime_ - 2.0), a));
    return g;
  }

  bool has_grad_x() const override { return static_cast<bool>(jac_); }
  Vec<D> lagrangian_grad_x(double, const Vec<D>& x, const Vec<D>& a,
                           const LawSummary<D>&) const override {
    if (!jac_) throw ParameterError("PowerLagrangian: target jacobian not supplied");
    // L_x = -(d pbar / dx)^T a
    return vscale<D>(-1.0, matvec_t(jac_(x), a));
  }

  bool has_closed_form_control() const override { return true; }
  Vec<D> closed_form_control(double, const Vec<D>& x, const Vec<D>& p,
                             const LawSummary<D>&) const override {
    const Vec<D> w = vsub<D>(target(x), p);
    const double r = norm<D>(w);
    if (r == 0) return Vec<D>{};
    const double q = conjugate_exponent(qprime_);
    return vscale<D>(std::pow(r, q - 1.0) / r, w);
  }

  // Closed-form Hamiltonian value, used as the Legendre oracle in tests.
  double hamiltonian_value(const Vec<D>& x, const Vec<D>& p) const {
    const double q = conjugate_exponent(qprime_);
    return std::pow(norm<D>(vsub<D>(target(x), p)), q) / q;
  }

 private:
  double qprime_;
  FieldFn pbar_;
  JacFn jac_;
  double pbar_bound_;
};

// ---------------------------------------------------------------------------
// Homotopy scaling. For theta in (0, 1] the scaled cost is
//
//   L_theta(t,x,a,mu) = theta L(t, x, a/theta, S_theta mu),
//
// where S_theta rescales the control marginal by 1/theta. Consequences used
// throughout: H_theta(p, mu) = theta H(p, S_theta mu), the best response is
// theta a*(p, S_theta mu), and a summary of the scaled system converts to a
// base summary by dividing its control statistics by theta. At theta = 0 the
// cost forces a = 0 and the Hamiltonian vanishes identically; the wrapper
// returns exact zeros so that the theta = 0 system is the plain heat flow.
// ---------------------------------------------------------------------------
template <std::size_t D>
class ScaledModel final : public LagrangianModel<D> {
 public:
  ScaledModel(std::shared_ptr<const LagrangianModel<D>> base, double theta)
      : base_(std::move(base)), theta_(theta) {
    if (!base_) throw ParameterError("ScaledModel: base model is required");
    if (!(theta >= 0 && theta <= 1)) throw ParameterError("ScaledModel: theta must be in [0,1]");
  }

  std::string name() const override { return base_->name(); }
  double theta() const { return theta_; }
  const LagrangianModel<D>& base() const { return *base_; }

  double exponent_qprime() const override { return base_->exponent_qprime(); }
  double growth_constant() const override { return base_->growth_constant(); }
  SummaryKind summary_kind() const override { return base_->summary_kind(); }

  double lagrangian(double t, const Vec<D>& x, const Vec<D>& a,
                    const LawSummary<D>& s) const override {
    if (theta_ == 0) return 0.0;
    return theta_ * base_->lagrangian(t, x, vscale<D>(1.0 / theta_, a),
                                      s.scaled_controls(1.0 / theta_));
  }

  Vec<D> lagrangian_grad_control(double t, const Vec<D>& x, const Vec<D>& a,
                                 const LawSummary<D>& s) const override {
    if (theta_ == 0) return Vec<D>{};
    return base_->lagrangian_grad_control(t, x, vscale<D>(1.0 / theta_, a),
                                          s.scaled_controls(1.0 / theta_));
  }

  bool has_grad_x() const override { return base_->has_grad_x(); }
  Vec<D> lagrangian_grad_x(double t, const Vec<D>& x, const Vec<D>& a,
                           const LawSummary<D>& s) const override {
    if (theta_ == 0) return Vec<D>{};
    return vscale<D>(theta_, base_->lagrangian_grad_x(t, x, vscale<D>(1.0 / theta_, a),
                                                      s.scaled_controls(1.0 / theta_)));
  }

  LawSummary<D> law_summary(const GridField<D>& m, const GridField<D>& alpha) const override {
    return base_->law_summary(m, alpha);  // raw statistics of the scaled system
  }

  // At theta = 0 the best response is identically zero regardless of the
  // base model, so the closed form is always available there.
  bool has_closed_form_control() const override {
    return theta_ == 0 || base_->has_closed_form_control();
  }
  Vec<D> closed_form_control(double t, const Vec<D>& x, const Vec<D>& p,
                             const LawSummary<D>& s) const override {
    if (theta_ == 0) return Vec<D>{};
    return vscale<D>(theta_,
                     base_->closed_form_control(t, x, p, s.scaled_controls(1.0 / theta_)));
  }

  bool has_closed_form_summary() const override { return base_->has_closed_form_summary(); }
  LawSummary<D> closed_form_summary(double t, const GridField<D>& p,
                                    const GridField<D>& m) const override {
    if (theta_ == 0) {
      LawSummary<D> s = base_->law_summary(m, GridField<D>(m.grid, D));
      return s.scaled_controls(0.0);
    }
    return base_->closed_form_summary(t, p, m).scaled_controls(theta_);
  }

  bool has_closed_form_gap() const override { return base_->has_closed_form_gap(); }
  double closed_form_gap(double t, const LawSummary<D>& s1, const LawSummary<D>& s2) const override {
    if (theta_ == 0) return 0.0;
    return theta_ * base_->closed_form_gap(t, s1.scaled_controls(1.0 / theta_),
                                           s2.scaled_controls(1.0 / theta_));
  }

 private:
  std::shared_ptr<const LagrangianModel<D>> base_;
  double theta_;
};

}  // namespace mfgc
