#pragma once
// Shared helpers for the test binaries: randomized smooth convex costs,
// bump densities, and random fields. Test-only code.

#include <cmath>
#include <random>

#include "mfgc/grid.hpp"
#include "mfgc/models.hpp"

namespace mfgc::testing {

// Strictly convex cost with no closed-form conjugate:
//   L(a) = |a|^2/2 + c cos(k.a + phase) + v.a,  with c |k|^2 < 1
// so the Hessian stays >= (1 - c|k|^2) I > 0. Exercises the numeric
// best-response path.
template <std::size_t D>
class RandomSmoothLagrangian final : public LagrangianModel<D> {
 public:
  RandomSmoothLagrangian(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (std::size_t i = 0; i < D; ++i) {
      wave_[i] = 2.0 * unif(rng);
      drift_[i] = unif(rng);
    }
    const double k2 = dot<D>(wave_, wave_);
    amp_ = 0.8 / std::max(1.0, k2);  // keeps amp * |k|^2 <= 0.8 < 1
    phase_ = pi * unif(rng);
  }

  std::string name() const override { return "random_smooth"; }
  double exponent_qprime() const override { return 2.0; }
  double growth_constant() const override { return 4.0; }
  SummaryKind summary_kind() const override { return SummaryKind::none; }

  double lagrangian(double, const Vec<D>&, const Vec<D>& a,
                    const LawSummary<D>&) const override {
    return 0.5 * dot<D>(a, a) + amp_ * std::cos(dot<D>(wave_, a) + phase_) + dot<D>(drift_, a);
  }

  Vec<D> lagrangian_grad_control(double, const Vec<D>&, const Vec<D>& a,
                                 const LawSummary<D>&) const override {
    const double osc = -amp_ * std::sin(dot<D>(wave_, a) + phase_);
    return vadd<D>(vadd<D>(a, vscale<D>(osc, wave_)), drift_);
  }

 private:
  Vec<D> wave_{};
  Vec<D> drift_{};
  double amp_ = 0;
  double phase_ = 0;
};

// Non-coercive cost (linear in the control): the best-response problem has
// no minimizer, so the numeric path must give up cleanly.
template <std::size_t D>
class LinearCost final : public LagrangianModel<D> {
 public:
  explicit LinearCost(const Vec<D>& v) : v_(v) {}
  std::string name() const override { return "linear_cost"; }
  double exponent_qprime() const override { return 2.0; }
  double growth_constant() const override { return 1.0; }
  SummaryKind summary_kind() const override { return SummaryKind::none; }
  double lagrangian(double, const Vec<D>&, const Vec<D>& a,
                    const LawSummary<D>&) const override {
    return dot<D>(v_, a);
  }
  Vec<D> lagrangian_grad_control(double, const Vec<D>&, const Vec<D>&,
                                 const LawSummary<D>&) const override {
    return v_;
  }

 private:
  Vec<D> v_;
};

// Shortest signed displacement from c to x on the torus, per coordinate.
template <std::size_t D>
inline Vec<D> torus_displacement(const TorusGrid<D>& g, const Vec<D>& x, const Vec<D>& c) {
  Vec<D> d{};
  for (std::size_t i = 0; i < D; ++i) {
    double v = x[i] - c[i];
    while (v > 0.5 * g.radius) v -= g.radius;
    while (v < -0.5 * g.radius) v += g.radius;
    d[i] = v;
  }
  return d;
}

// Smooth positive bump centered at `center`, normalized to unit discrete mass.
template <std::size_t D>
inline GridField<D> gaussian_bump(const TorusGrid<D>& g, const Vec<D>& center, double width) {
  GridField<D> m(g, 1);
  for (std::size_t j = 0; j < g.num_nodes(); ++j) {
    const Vec<D> d = torus_displacement(g, g.coord(j), center);
    m(j) = std::exp(-dot<D>(d, d) / (width * width));
  }
  const double mass = integrate_scalar(m);
  for (auto& v : m.values) v /= mass;
  return m;
}

// Uniform probability density on the torus.
template <std::size_t D>
inline GridField<D> uniform_density(const TorusGrid<D>& g) {
  double vol = 1;
  for (std::size_t i = 0; i < D; ++i) vol *= g.radius;
  return GridField<D>::constant(g, 1.0 / vol);
}

template <std::size_t D>
inline GridField<D> random_field(const TorusGrid<D>& g, int components, std::mt19937_64& rng,
                                 double lo = -1.0, double hi = 1.0) {
  GridField<D> f(g, components);
  std::uniform_real_distribution<double> unif(lo, hi);
  for (auto& v : f.values) v = unif(rng);
  return f;
}

// Random normalized density bounded away from zero.
template <std::size_t D>
inline GridField<D> random_density(const TorusGrid<D>& g, std::mt19937_64& rng) {
  GridField<D> m = random_field(g, 1, rng, 0.1, 1.0);
  const double mass = integrate_scalar(m);
  for (auto& v : m.values) v /= mass;
  return m;
}

}  // namespace mfgc::testing
