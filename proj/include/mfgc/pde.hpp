// Spatial operators and implicit time steps on the torus grid.
//
// Both equations advance with backward-Euler diffusion: the value equation
// solves (I + nu dt K) u_n = u_{n+1} - dt (H_n - f_n) with the nonlinear term
// taken explicitly, and the density equation solves
// (I + dt (nu K + B(velocity))) m_{n+1} = m_n with B the flux-form upwind
// divergence.  K is the negative discrete laplacian.
//
// Assembly convention: each diagonal entry is the negated sum of the
// off-diagonal entries in its column, accumulated in assembly order.  Column
// sums therefore vanish to rounding, which is what makes the density steps
// conserve mass to rounding over entire paths, and the off-diagonal signs
// make I + dt(...) an M-matrix, so the steps also preserve positivity.

#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mfgc/errors.hpp"
#include "mfgc/grid.hpp"
#include "mfgc/linear_solver.hpp"

namespace mfgc {

namespace detail {

// Shared assembly pattern: push all off-diagonal triplets through `emit`,
// which also accumulates per-column sums; diagonals close the columns.
inline void close_columns(std::vector<Triplet>& entries, const std::vector<double>& col_sum) {
  for (std::size_t j = 0; j < col_sum.size(); ++j)
    entries.emplace_back(static_cast<int>(j), static_cast<int>(j), -col_sum[j]);
}

}  // namespace detail

// K = -laplacian: K_{j,k} = -1/h^2 for grid neighbors, diagonal closes the
// column.  Symmetric positive semidefinite; kernel = constants.
template <std::size_t D>
SparseMatrix stiffness_matrix(const TorusGrid<D>& g) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  const double w = 1.0 / (g.h * g.h);
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(n) * (2 * D + 1));
  std::vector<double> col_sum(g.num_nodes(), 0.0);
  for (std::size_t j = 0; j < g.num_nodes(); ++j) {
    for (std::size_t i = 0; i < D; ++i) {
      for (int step : {-1, 1}) {
        const std::size_t k = g.neighbor(j, i, step);
        entries.emplace_back(static_cast<int>(j), static_cast<int>(k), -w);
        col_sum[k] += -w;
      }
    }
  }
  detail::close_columns(entries, col_sum);
  SparseMatrix m(n, n);
  m.setFromTriplets(entries.begin(), entries.end());
  return m;
}

// Flux-form upwind discretization of m -> div(velocity * m).  For each grid
// interface the velocity is the arithmetic mean of the two cell values; its
// positive part carries mass with the cell behind it, the negative part with
// the cell ahead.  Off-diagonals are nonpositive and each column sums to
// zero (to rounding), so I + dt * B is a column diagonally dominant M-matrix.
template <std::size_t D>
SparseMatrix transport_matrix(const TorusGrid<D>& g, const GridField<D>& velocity) {
  require_same_grid(g, velocity.grid, "transport_matrix");
  if (velocity.components != static_cast<int>(D))
    throw ShapeError("transport_matrix: velocity needs d components");
  velocity.require_finite("transport_matrix velocity");

  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(n) * (2 * D + 1));
  std::vector<double> col_sum(g.num_nodes(), 0.0);
  for (std::size_t j = 0; j < g.num_nodes(); ++j) {
    for (std::size_t i = 0; i < D; ++i) {
      const std::size_t k = g.neighbor(j, i, 1);  // interface between j and k
      const double a = 0.5 * (velocity(j, static_cast<int>(i)) + velocity(k, static_cast<int>(i)));
      const double out_right = std::max(a, 0.0) / g.h;  // leaves j, arrives in k
      const double out_left = -std::min(a, 0.0) / g.h;  // leaves k, arrives in j
      if (out_right != 0.0) {
        entries.emplace_back(static_cast<int>(k), static_cast<int>(j), -out_right);
        col_sum[j] += -out_right;
      }
      if (out_left != 0.0) {
        entries.emplace_back(static_cast<int>(j), static_cast<int>(k), -out_left);
        col_sum[k] += -out_left;
      }
    }
  }
  detail::close_columns(entries, col_sum);
  SparseMatrix m(n, n);
  m.setFromTriplets(entries.begin(), entries.end());
  return m;
}

// Cached factorization of I + coeff * K for a fixed coefficient.  Serves as
// the diffusion step (coeff = nu * dt) and as the smoothing operator
// (I + s K)^{-1} used by density-dependent couplings (coeff = s).
template <std::size_t D>
class ImplicitHeat {
 public:
  ImplicitHeat(const TorusGrid<D>& g, double coeff) : grid_(g), coeff_(coeff) {
    if (!(coeff >= 0.0)) throw ParameterError("ImplicitHeat: coefficient must be >= 0");
    SparseMatrix a = stiffness_matrix(g) * coeff;
    const auto n = static_cast<Eigen::Index>(g.num_nodes());
    SparseMatrix eye(n, n);
    eye.setIdentity();
    a = a + eye;
    solver_.factorize(std::move(a));
  }

  const TorusGrid<D>& grid() const { return grid_; }
  double coefficient() const { return coeff_; }

  // Solves (I + coeff K) out = rhs for a scalar field.
  GridField<D> apply_inverse(const GridField<D>& rhs) const {
    require_same_grid(grid_, rhs.grid, "ImplicitHeat");
    if (!rhs.is_scalar()) throw ShapeError("ImplicitHeat: field must be scalar");
    GridField<D> out = GridField<D>::zeros(grid_, 1);
    out.values = solver_.solve_checked(rhs.values, 1e-10);
    return out;
  }

 private:
  TorusGrid<D> grid_;
  double coeff_;
  DirectSolver solver_;
};

// One backward value step.  `source` is the explicit term H_n - f_n already
// evaluated on the grid; `diffusion` must hold coefficient nu * dt for the
// same dt passed here.
template <std::size_t D>
GridField<D> hjb_step_backward(const ImplicitHeat<D>& diffusion, double dt,
                               const GridField<D>& u_next, const GridField<D>& source) {
  if (!(dt > 0.0)) throw ParameterError("hjb_step_backward: dt must be positive");
  require_same_grid(u_next.grid, source.grid, "hjb_step_backward");
  if (!u_next.is_scalar() || !source.is_scalar())
    throw ShapeError("hjb_step_backward: fields must be scalar");
  GridField<D> rhs = u_next;
  for (std::size_t k = 0; k < rhs.values.size(); ++k) rhs.values[k] -= dt * source.values[k];
  GridField<D> u = diffusion.apply_inverse(rhs);
  u.require_finite("hjb_step_backward result");
  return u;
}

// Forward density steps: (I + dt (nu K + B(velocity))) m_{n+1} = m_n.
// The diffusion part of the matrix is assembled once; the transport part is
// rebuilt and refactorized for each step's velocity field.
template <std::size_t D>
class TransportDiffusionStepper {
 public:
  TransportDiffusionStepper(const TorusGrid<D>& g, double nu, double dt)
      : grid_(g), nu_(nu), dt_(dt) {
    if (!(nu >= 0.0)) throw ParameterError("TransportDiffusionStepper: nu must be >= 0");
    if (!(dt > 0.0)) throw ParameterError("TransportDiffusionStepper: dt must be positive");
    const auto n = static_cast<Eigen::Index>(g.num_nodes());
    SparseMatrix eye(n, n);
    eye.setIdentity();
    base_ = eye + stiffness_matrix(g) * (nu * dt);
  }

  const TorusGrid<D>& grid() const { return grid_; }

  // Advances one step; time_index only labels errors.
  GridField<D> step(const GridField<D>& density, const GridField<D>& velocity,
                    int time_index = -1) const {
    require_same_grid(grid_, density.grid, "TransportDiffusionStepper");
    if (!density.is_scalar()) throw ShapeError("TransportDiffusionStepper: density must be scalar");

    SparseMatrix a = base_ + transport_matrix(grid_, velocity) * dt_;
    DirectSolver solver(std::move(a));
    GridField<D> next = GridField<D>::zeros(grid_, 1);
    next.values = solver.solve_checked(density.values, 1e-10);

    // The M-matrix structure guarantees positivity and mass conservation up
    // to rounding; a real violation means the assembly or solve went wrong.
    double mass_in = 0.0, mass_out = 0.0, low = next.values[0], high = 0.0;
    for (double v : density.values) mass_in += v;
    for (double v : next.values) {
      mass_out += v;
      low = std::min(low, v);
      high = std::max(high, std::abs(v));
    }
    if (!std::isfinite(mass_out))
      throw StepError("density step produced non-finite values", time_index);
    const double vol = cell_volume(grid_);
    if (std::abs(mass_out - mass_in) * vol > 1e-10 * (1.0 + std::abs(mass_in) * vol))
      throw StepError("density step lost mass beyond rounding", time_index);
    if (low < -1e-9 * std::max(1.0, high))
      throw StepError("density step produced negative mass beyond rounding", time_index);
    return next;
  }

 private:
  TorusGrid<D> grid_;
  double nu_;
  double dt_;
  SparseMatrix base_;
};

// Pure diffusion path: the density evolution with zero drift, used as the
// reference flow when the control cost is switched off and as a neutral
// initial path for continuation.
template <std::size_t D>
DensityPath<D> heat_flow(const TorusGrid<D>& g, const TimeGrid& time, double nu,
                         const GridField<D>& m0) {
  require_same_grid(g, m0.grid, "heat_flow");
  if (!m0.is_scalar()) throw ShapeError("heat_flow: density must be scalar");
  DensityPath<D> path(g, time);
  path[0] = m0;
  const ImplicitHeat<D> diffusion(g, nu * time.dt);
  for (int n = 0; n < time.steps; ++n) path[n + 1] = diffusion.apply_inverse(path[n]);
  return path;
}

}  // namespace mfgc
