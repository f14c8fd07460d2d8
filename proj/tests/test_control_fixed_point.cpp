// Control-law fixed point tests.  The damped best-response iteration is
// validated against independently written closed forms (not the library's
// own closed_form_summary), and the growth bounds against converged laws.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <memory>
#include <random>

#include "mfgc/control_fixed_point.hpp"
#include "support.hpp"

using namespace mfgc;
using mfgc::testing::random_density;
using mfgc::testing::random_field;

namespace {

// Largest componentwise gap between two fields on the same grid.
template <std::size_t D>
double field_gap(const GridField<D>& a, const GridField<D>& b) {
  double gap = 0.0;
  for (std::size_t k = 0; k < a.values.size(); ++k)
    gap = std::max(gap, std::abs(a.values[k] - b.values[k]));
  return gap;
}

}  // namespace

TEST_CASE("linear market iteration reproduces the self-consistent mean", "[law]") {
  std::mt19937_64 rng(71);
  TorusGrid<1> g{64, 2.0};
  for (double eps : {0.0, 0.5, 1.0, 2.0}) {
    ExhaustibleLinear market(eps);
    HamiltonianEvaluator<1> eval(market);
    const GridField<1> m = random_density(g, rng);
    const GridField<1> p = random_field(g, 1, rng);

    const auto r = solve_control_law(eval, 0.3, p, m);
    CHECK(r.residual <= 1e-10);
    CHECK(r.iterations < 200);

    // Mean field equilibrium mean written out from scratch: the pointwise
    // minimizer is a(x) = (1/(1+eps) - eps/(1+eps)*abar - p(x))/2, and taking
    // density averages gives abar = (1 - (1+eps) G) / (2 + 3 eps).
    const double gmean = integrate_scalar(p, m);
    const double abar = (1.0 - (1.0 + eps) * gmean) / (2.0 + 3.0 * eps);
    CHECK(std::abs(r.summary.mean_alpha[0] - abar) < 1e-9);

    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j) {
      const double expected =
          0.5 * (1.0 / (1.0 + eps) - eps / (1.0 + eps) * abar - p(j));
      worst = std::max(worst, std::abs(r.control(j, 0) - expected));
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("density support restricts the law but not the control field", "[law]") {
  TorusGrid<1> g{64, 2.0};
  ExhaustibleLinear market(0.5);
  HamiltonianEvaluator<1> eval(market);

  // Density supported on the right half only; the mean is taken there.
  GridField<1> m = GridField<1>::zeros(g, 1);
  for (std::size_t j = 0; j < g.num_nodes(); ++j)
    if (g.coord(j)[0] >= 0.0) m(j) = 1.0;
  const double mass = integrate_scalar(m);
  for (double& v : m.values) v /= mass;

  const GridField<1> p = GridField<1>::sample_scalar(
      g, [&](const Vec<1>& x) { return 0.4 * std::sin(2.0 * pi * x[0] / g.radius); });

  const auto r = solve_control_law(eval, 0.0, p, m);
  const double gmean = integrate_scalar(p, m);
  const double abar = (1.0 - 1.5 * gmean) / 3.5;
  CHECK(std::abs(r.summary.mean_alpha[0] - abar) < 1e-9);

  // Off-support nodes still carry the pointwise best response to the
  // converged summary (the transport step needs a velocity everywhere).
  double worst = 0.0;
  for (std::size_t j = 0; j < g.num_nodes(); ++j) {
    const double expected = 0.5 * (1.0 / 1.5 - (0.5 / 1.5) * abar - p(j));
    worst = std::max(worst, std::abs(r.control(j, 0) - expected));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("crowd motion iteration matches an independent drift balance", "[law]") {
  std::mt19937_64 rng(72);
  TorusGrid<1> g{48, 2.0};
  const double blend = 0.5, lambda = 0.8;
  CrowdMotion<1> crowd(blend, lambda, 2.0, 2.0,
                       [](const Vec<1>& x) { return 1.0 + 0.5 * std::cos(pi * x[0]); });
  HamiltonianEvaluator<1> eval(crowd);
  const GridField<1> m = random_density(g, rng);
  const GridField<1> p = random_field(g, 1, rng);

  const auto r = solve_control_law(eval, 0.1, p, m);
  CHECK(r.residual <= 1e-10);

  // Independent balance: with quadratic costs a(x) = -(p(x) + blend*lambda*V)
  // and V = (1/Z) int a k dm, eliminating a gives
  // V = -int p k dm / (Z + blend*lambda * int k dm).
  GridField<1> k = GridField<1>::sample_scalar(
      g, [](const Vec<1>& x) { return 1.0 + 0.5 * std::cos(pi * x[0]); });
  GridField<1> pk = GridField<1>::zeros(g, 1);
  GridField<1> k2 = GridField<1>::zeros(g, 1);
  for (std::size_t j = 0; j < g.num_nodes(); ++j) {
    pk(j) = p(j) * k(j);
    k2(j) = k(j) * k(j);
  }
  const double z = std::sqrt(integrate_scalar(k2, m));
  const double kbar = integrate_scalar(k, m);
  const double v = -integrate_scalar(pk, m) / (z + blend * lambda * kbar);
  CHECK(std::abs(r.summary.weighted_mean[0] - v) < 1e-9);

  double worst = 0.0;
  for (std::size_t j = 0; j < g.num_nodes(); ++j)
    worst = std::max(worst, std::abs(r.control(j, 0) - (-(p(j) + blend * lambda * v))));
  CHECK(worst < 1e-9);

  // Moment control: the drift statistic never exceeds the q' moment.
  CHECK(norm<1>(r.summary.weighted_mean) <=
        lambda_moment(m, r.control, crowd.exponent_qprime()) + 1e-12);
}

TEST_CASE("closed-form construction agrees with the iterative path", "[law]") {
  std::mt19937_64 rng(73);
  TorusGrid<1> g{48, 2.0};
  const GridField<1> m = random_density(g, rng);
  const GridField<1> p = random_field(g, 1, rng);

  SECTION("exhaustible linear") {
    ExhaustibleLinear market(0.7);
    HamiltonianEvaluator<1> eval(market);
    const auto iter = solve_control_law(eval, 0.2, p, m);
    const auto direct = closed_form_control_law(eval, 0.2, p, m);
    CHECK(direct.residual <= 1e-10);
    CHECK(field_gap(iter.control, direct.control) < 1e-9);
    CHECK(std::abs(iter.summary.mean_alpha[0] - direct.summary.mean_alpha[0]) < 1e-9);
  }
  SECTION("crowd motion with quadratic costs") {
    CrowdMotion<1> crowd(0.4, 1.1, 2.0, 2.0,
                         [](const Vec<1>& x) { return 1.0 + 0.3 * std::sin(pi * x[0]); });
    HamiltonianEvaluator<1> eval(crowd);
    const auto iter = solve_control_law(eval, 0.2, p, m);
    const auto direct = closed_form_control_law(eval, 0.2, p, m);
    CHECK(direct.residual <= 1e-10);
    CHECK(field_gap(iter.control, direct.control) < 1e-9);
    CHECK(std::abs(iter.summary.weighted_mean[0] - direct.summary.weighted_mean[0]) < 1e-9);
  }
}

TEST_CASE("warm start from a converged control returns in one sweep", "[law]") {
  std::mt19937_64 rng(74);
  TorusGrid<1> g{32, 2.0};
  ExhaustibleLinear market(1.0);
  HamiltonianEvaluator<1> eval(market);
  const GridField<1> m = random_density(g, rng);
  const GridField<1> p = random_field(g, 1, rng);

  const auto first = solve_control_law(eval, 0.0, p, m);
  const auto again = solve_control_law(eval, 0.0, p, m, first.control);
  CHECK(again.iterations == 1);
  CHECK(again.residual <= 1e-10);
  CHECK(field_gap(first.control, again.control) == 0.0);
}

TEST_CASE("scaled costs solve to the scaled law", "[law][homotopy]") {
  std::mt19937_64 rng(75);
  TorusGrid<1> g{48, 2.0};
  auto base = std::make_shared<ExhaustibleLinear>(0.5);
  HamiltonianEvaluator<1> base_eval(*base);
  const GridField<1> m = random_density(g, rng);
  const GridField<1> p = random_field(g, 1, rng);
  const auto full = solve_control_law(base_eval, 0.0, p, m);

  SECTION("theta = 0.5 halves the control field") {
    ScaledModel<1> half(base, 0.5);
    HamiltonianEvaluator<1> eval(half);
    const auto r = solve_control_law(eval, 0.0, p, m);
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(r.control(j, 0) - 0.5 * full.control(j, 0)));
    CHECK(worst < 1e-9);
    CHECK(std::abs(r.summary.mean_alpha[0] - 0.5 * full.summary.mean_alpha[0]) < 1e-9);
  }
  SECTION("theta = 0 collapses to the zero control exactly") {
    ScaledModel<1> off(base, 0.0);
    HamiltonianEvaluator<1> eval(off);
    const auto r = solve_control_law(eval, 0.0, p, m);
    CHECK(r.iterations == 1);
    CHECK(r.residual == 0.0);
    for (double v : r.control.values) CHECK(v == 0.0);
  }
}

TEST_CASE("converged laws satisfy the growth bounds", "[law][bounds]") {
  std::mt19937_64 rng(76);
  TorusGrid<1> g{48, 2.0};
  const GridField<1> m = random_density(g, rng);
  const GridField<1> p = random_field(g, 1, rng);

  SECTION("exhaustible linear") {
    ExhaustibleLinear market(0.5);
    HamiltonianEvaluator<1> eval(market);
    const auto r = solve_control_law(eval, 0.0, p, m);
    const auto b = check_growth_bounds(market, m, r.control, p);
    CHECK(b.moment_ok());
    CHECK(b.sup_ok());
    CHECK(b.lambda_qprime == lambda_moment(m, r.control, market.exponent_qprime()));
    CHECK(b.lambda_sup == lambda_sup(m, r.control));
  }
  SECTION("crowd motion") {
    CrowdMotion<1> crowd(0.5, 0.8, 2.0, 2.0,
                         [](const Vec<1>& x) { return 1.0 + 0.5 * std::cos(pi * x[0]); });
    HamiltonianEvaluator<1> eval(crowd);
    const auto r = solve_control_law(eval, 0.0, p, m);
    const auto b = check_growth_bounds(crowd, m, r.control, p);
    CHECK(b.moment_ok());
    CHECK(b.sup_ok());
  }
  SECTION("scaled model keeps the base constant") {
    auto base = std::make_shared<ExhaustibleLinear>(0.5);
    ScaledModel<1> half(base, 0.5);
    HamiltonianEvaluator<1> eval(half);
    const auto r = solve_control_law(eval, 0.0, p, m);
    const auto b = check_growth_bounds(half, m, r.control, p);
    CHECK(b.moment_ok());
    CHECK(b.sup_ok());
  }
}

TEST_CASE("iteration budget exhaustion reports the defect history", "[law][errors]") {
  std::mt19937_64 rng(77);
  TorusGrid<1> g{32, 2.0};
  ExhaustibleLinear market(0.5);
  HamiltonianEvaluator<1> eval(market);
  const GridField<1> m = random_density(g, rng);
  const GridField<1> p = random_field(g, 1, rng);

  ControlLawOptions opts;
  opts.max_iterations = 2;
  opts.tolerance = 1e-16;
  try {
    solve_control_law(eval, 0.0, p, m, opts);
    FAIL("expected FixedPointError");
  } catch (const FixedPointError& e) {
    REQUIRE(e.residual_history.size() == 2);
    CHECK(e.residual_history[1] < e.residual_history[0]);
  }
}

TEST_CASE("control-law input validation", "[law][errors]") {
  TorusGrid<1> g{16, 2.0};
  TorusGrid<1> g2{32, 2.0};
  ExhaustibleLinear market(0.5);
  HamiltonianEvaluator<1> eval(market);
  const GridField<1> m = GridField<1>::constant(g, 0.5);
  const GridField<1> p = GridField<1>::zeros(g, 1);

  SECTION("gradient needs d components") {
    TorusGrid<2> gg{8, 2.0};
    PowerLagrangian<2> cost(2.0);
    HamiltonianEvaluator<2> e2(cost);
    const GridField<2> m2 = GridField<2>::constant(gg, 0.25);
    const GridField<2> scalar = GridField<2>::zeros(gg, 1);
    CHECK_THROWS_AS(solve_control_law(e2, 0.0, scalar, m2), ShapeError);
  }
  SECTION("warm start must live on the same grid") {
    const GridField<1> other = GridField<1>::zeros(g2, 1);
    CHECK_THROWS_AS(solve_control_law(eval, 0.0, p, m, other), ShapeError);
  }
  SECTION("options are validated") {
    ControlLawOptions bad;
    bad.damping = 0.0;
    CHECK_THROWS_AS(solve_control_law(eval, 0.0, p, m, bad), ParameterError);
    bad = ControlLawOptions{};
    bad.tolerance = -1.0;
    CHECK_THROWS_AS(solve_control_law(eval, 0.0, p, m, bad), ParameterError);
    bad = ControlLawOptions{};
    bad.max_iterations = 0;
    CHECK_THROWS_AS(solve_control_law(eval, 0.0, p, m, bad), ParameterError);
  }
  SECTION("closed form requires a closed-form summary") {
    std::mt19937_64 rng(5);
    mfgc::testing::RandomSmoothLagrangian<1> smooth(rng);
    HamiltonianEvaluator<1> se(smooth);
    CHECK_THROWS_AS(closed_form_control_law(se, 0.0, p, m), ParameterError);
  }
}
