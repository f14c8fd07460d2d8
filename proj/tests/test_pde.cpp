// Operator assembly and time-stepping tests.  Diffusion is pinned against an
// independent Fourier-space oracle; transport against conservation,
// positivity, and first-order consistency with the analytic divergence.

#include <Eigen/Sparse>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <limits>
#include <random>

#include "mfgc/pde.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mfgc;
using mfgc::testing::implicit_heat_filter;
using mfgc::testing::laplacian_symbol;
using mfgc::testing::random_density;
using mfgc::testing::random_field;

namespace {

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TEST_CASE("stiffness matrix matches the stencil laplacian", "[pde]") {
  std::mt19937_64 rng(11);
  SECTION("one dimension") {
    TorusGrid<1> g{32, 2.0};
    const GridField<1> u = random_field(g, 1, rng);
    const GridField<1> lap = laplacian(u);
    const Eigen::VectorXd ku = stiffness_matrix(g) * to_eigen(u.values);
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(ku[static_cast<Eigen::Index>(j)] + lap.values[j]));
    CHECK(worst < 1e-11);
  }
  SECTION("two dimensions") {
    TorusGrid<2> g{8, 2.0};
    const GridField<2> u = random_field(g, 1, rng);
    const GridField<2> lap = laplacian(u);
    const Eigen::VectorXd ku = stiffness_matrix(g) * to_eigen(u.values);
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(ku[static_cast<Eigen::Index>(j)] + lap.values[j]));
    CHECK(worst < 1e-11);
  }
}

TEST_CASE("implicit diffusion matches the Fourier filter", "[pde]") {
  std::mt19937_64 rng(12);
  SECTION("one dimension, ten steps") {
    TorusGrid<1> g{32, 2.0};
    GridField<1> f = random_field(g, 1, rng);
    const GridField<1> expected = implicit_heat_filter(f, 0.3 * 0.02, 10);
    const ImplicitHeat<1> heat(g, 0.3 * 0.02);
    for (int n = 0; n < 10; ++n) f = heat.apply_inverse(f);
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(f.values[j] - expected.values[j]));
    CHECK(worst < 1e-12);
  }
  SECTION("two dimensions, three steps") {
    TorusGrid<2> g{8, 1.0};
    GridField<2> f = random_field(g, 1, rng);
    const GridField<2> expected = implicit_heat_filter(f, 0.2 * 0.05, 3);
    const ImplicitHeat<2> heat(g, 0.2 * 0.05);
    for (int n = 0; n < 3; ++n) f = heat.apply_inverse(f);
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(f.values[j] - expected.values[j]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("heat flow conserves mass and matches repeated implicit solves", "[pde]") {
  std::mt19937_64 rng(13);
  TorusGrid<1> g{48, 2.0};
  const TimeGrid time{1.0, 20};
  const GridField<1> m0 = random_density(g, rng);
  const DensityPath<1> path = heat_flow(g, time, 0.4, m0);

  REQUIRE(path.slices.size() == 21);
  const double mass0 = path.mass(0);
  for (int n = 0; n <= time.steps; ++n) {
    CHECK(std::abs(path.mass(n) - mass0) < 1e-12);
    CHECK(path.min_value(n) > 0.0);
  }
  // Spot check against the oracle at the final time.
  const GridField<1> expected = implicit_heat_filter(m0, 0.4 * time.dt, time.steps);
  double worst = 0.0;
  for (std::size_t j = 0; j < g.num_nodes(); ++j)
    worst = std::max(worst, std::abs(path[time.steps].values[j] - expected.values[j]));
  CHECK(worst < 1e-12);
}

TEST_CASE("transport columns vanish and steps conserve mass", "[pde]") {
  std::mt19937_64 rng(14);
  TorusGrid<1> g{40, 2.0};

  SECTION("column sums vanish to rounding") {
    const GridField<1> v = random_field(g, 1, rng, -3.0, 3.0);
    const SparseMatrix b = transport_matrix(g, v);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(b.rows());
    const Eigen::VectorXd colsum = b.transpose() * ones;
    double scale = 0.0;
    for (int k = 0; k < b.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(b, k); it; ++it) scale = std::max(scale, std::abs(it.value()));
    CHECK(colsum.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, scale));
  }

  SECTION("fifty steps with a rough velocity stay conservative and positive") {
    const TransportDiffusionStepper<1> stepper(g, 0.25, 0.01);
    GridField<1> m = random_density(g, rng);
    const double mass0 = integrate_scalar(m);
    for (int n = 0; n < 50; ++n) {
      const GridField<1> v = random_field(g, 1, rng, -50.0, 50.0);
      m = stepper.step(m, v, n);
      double low = m.values[0];
      for (double x : m.values) low = std::min(low, x);
      CHECK(low >= -1e-14);
    }
    CHECK(std::abs(integrate_scalar(m) - mass0) < 1e-12);
  }
}

TEST_CASE("upwind transport is first-order consistent", "[pde]") {
  // Smooth velocity and density with an analytic divergence of the product;
  // the upwind bias makes the truncation O(h), so halving h should roughly
  // halve the error.
  const auto velocity_fn = [](double x) { return std::sin(pi * x) + 0.3; };
  const auto density_fn = [](double x) { return std::exp(std::cos(pi * x)); };
  const auto div_fn = [&](double x) {
    // d/dx (v m) = v' m + v m'
    const double v = velocity_fn(x), m = density_fn(x);
    const double vp = pi * std::cos(pi * x);
    const double mp = -pi * std::sin(pi * x) * m;
    return vp * m + v * mp;
  };

  auto sup_error = [&](int n) {
    TorusGrid<1> g{n, 2.0};
    GridField<1> v = GridField<1>::sample_scalar(g, [&](const Vec<1>& x) { return velocity_fn(x[0]); });
    GridField<1> m = GridField<1>::sample_scalar(g, [&](const Vec<1>& x) { return density_fn(x[0]); });
    const Eigen::VectorXd bm = transport_matrix(g, v) * to_eigen(m.values);
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(bm[static_cast<Eigen::Index>(j)] - div_fn(g.coord(j)[0])));
    return worst;
  };

  const double e64 = sup_error(64);
  const double e128 = sup_error(128);
  CHECK(e64 / e128 > 1.6);
  CHECK(e64 / e128 < 2.4);
}

TEST_CASE("dual transport advects smooth functions", "[pde]") {
  // Columns of the transport matrix act on test functions as the upwind
  // advection -velocity . grad, the discrete adjoint structure behind the
  // integration-by-parts identities used in the energy checks.
  const auto velocity_fn = [](double x) { return std::cos(pi * x) - 0.2; };
  const auto phi_fn = [](double x) { return std::sin(pi * x); };
  const auto advect_fn = [&](double x) { return -velocity_fn(x) * pi * std::cos(pi * x); };

  auto sup_error = [&](int n) {
    TorusGrid<1> g{n, 2.0};
    GridField<1> v = GridField<1>::sample_scalar(g, [&](const Vec<1>& x) { return velocity_fn(x[0]); });
    GridField<1> phi = GridField<1>::sample_scalar(g, [&](const Vec<1>& x) { return phi_fn(x[0]); });
    const Eigen::VectorXd bt = SparseMatrix(transport_matrix(g, v).transpose()) * to_eigen(phi.values);
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(bt[static_cast<Eigen::Index>(j)] - advect_fn(g.coord(j)[0])));
    return worst;
  };

  const double e64 = sup_error(64);
  const double e128 = sup_error(128);
  CHECK(e64 / e128 > 1.6);
  CHECK(e64 / e128 < 2.4);
}

TEST_CASE("backward value step solves its implicit equation", "[pde]") {
  std::mt19937_64 rng(15);
  TorusGrid<1> g{32, 2.0};
  const double nu = 0.3, dt = 0.05;
  const ImplicitHeat<1> diffusion(g, nu * dt);
  const GridField<1> u_next = random_field(g, 1, rng);
  const GridField<1> source = random_field(g, 1, rng);

  const GridField<1> u = hjb_step_backward(diffusion, dt, u_next, source);

  // Recompute the residual of (I + nu dt K) u = u_next - dt source directly.
  const Eigen::VectorXd lhs =
      to_eigen(u.values) + nu * dt * (stiffness_matrix(g) * to_eigen(u.values));
  double worst = 0.0;
  for (std::size_t j = 0; j < g.num_nodes(); ++j)
    worst = std::max(worst, std::abs(lhs[static_cast<Eigen::Index>(j)] -
                                     (u_next.values[j] - dt * source.values[j])));
  CHECK(worst < 1e-12);
}

TEST_CASE("source-free value steps obey the maximum principle", "[pde]") {
  std::mt19937_64 rng(16);
  TorusGrid<1> g{32, 2.0};
  const ImplicitHeat<1> diffusion(g, 0.5 * 0.1);
  const GridField<1> u_next = random_field(g, 1, rng);
  const GridField<1> zero = GridField<1>::zeros(g, 1);
  const GridField<1> u = hjb_step_backward(diffusion, 0.1, u_next, zero);

  double lo = u_next.values[0], hi = u_next.values[0];
  for (double v : u_next.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : u.values) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
}

TEST_CASE("smoothing operator is symmetric, fixes constants, filters modes", "[pde]") {
  std::mt19937_64 rng(17);
  TorusGrid<1> g{32, 2.0};
  const double s = 0.02;
  const ImplicitHeat<1> smoother(g, s);

  SECTION("symmetry") {
    const GridField<1> f = random_field(g, 1, rng);
    const GridField<1> w = random_field(g, 1, rng);
    const GridField<1> sf = smoother.apply_inverse(f);
    const GridField<1> sw = smoother.apply_inverse(w);
    double left = 0.0, right = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j) {
      left += sf.values[j] * w.values[j];
      right += f.values[j] * sw.values[j];
    }
    CHECK(std::abs(left - right) < 1e-10 * (1.0 + std::abs(left)));
  }
  SECTION("constants are fixed points") {
    const GridField<1> c = GridField<1>::constant(g, 3.25);
    const GridField<1> sc = smoother.apply_inverse(c);
    for (double v : sc.values) CHECK(std::abs(v - 3.25) < 1e-12);
  }
  SECTION("single modes scale by the symbol") {
    const int k = 3;
    const GridField<1> mode = GridField<1>::sample_scalar(
        g, [&](const Vec<1>& x) { return std::cos(2.0 * pi * k * x[0] / g.radius); });
    const GridField<1> sm = smoother.apply_inverse(mode);
    const double gain = 1.0 / (1.0 + s * laplacian_symbol(g, {k}));
    double worst = 0.0;
    for (std::size_t j = 0; j < g.num_nodes(); ++j)
      worst = std::max(worst, std::abs(sm.values[j] - gain * mode.values[j]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("pde layer input validation", "[pde][errors]") {
  TorusGrid<1> g{16, 2.0};
  TorusGrid<2> g2{8, 2.0};

  SECTION("implicit heat rejects negative coefficients") {
    CHECK_THROWS_AS(ImplicitHeat<1>(g, -0.1), ParameterError);
  }
  SECTION("transport needs a d-component velocity") {
    const GridField<2> scalar = GridField<2>::zeros(g2, 1);
    CHECK_THROWS_AS(transport_matrix(g2, scalar), ShapeError);
  }
  SECTION("transport rejects non-finite velocities") {
    GridField<1> v = GridField<1>::zeros(g, 1);
    v.values[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(transport_matrix(g, v), NumericError);
  }
  SECTION("stepper requires a scalar density") {
    const TransportDiffusionStepper<2> stepper(g2, 0.1, 0.01);
    const GridField<2> vec = GridField<2>::zeros(g2, 2);
    CHECK_THROWS_AS(stepper.step(vec, vec), ShapeError);
  }
  SECTION("direct solver rejects misuse") {
    DirectSolver idle;
    CHECK_THROWS_AS(idle.solve({1.0, 2.0}), ParameterError);
    SparseMatrix singular(2, 2);  // the zero matrix has no LU factorization
    CHECK_THROWS_AS(DirectSolver{singular}, NumericError);
    SparseMatrix rect(2, 3);
    CHECK_THROWS_AS(DirectSolver{rect}, ShapeError);
    SparseMatrix eye(2, 2);
    eye.setIdentity();
    DirectSolver ok(std::move(eye));
    CHECK_THROWS_AS(ok.solve({1.0, 2.0, 3.0}), ShapeError);
  }
}
