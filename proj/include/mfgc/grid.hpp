#pragma once
// Uniform tensor grids on the d-dimensional torus of side a, node-sampled
// fields, probability-density paths, quadrature, and the finite-difference
// stencils shared by the PDE schemes. Supported dimensions: d = 1, 2.
//
// Conventions used throughout:
//   * node coordinates are x_k = -a/2 + k*h per dimension, h = a/N, so the
//     node set is left-closed/right-open in [-a/2, a/2);
//   * node (N-1) has node 0 as its +e_i neighbor (periodic wraparound);
//   * all quadratures are plain h^d-weighted sums accumulated in a fixed
//     (row-major node) order, so results are bitwise reproducible.

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <type_traits>
#include <vector>

#include "mfgc/errors.hpp"

namespace mfgc {

inline constexpr double pi = 3.14159265358979323846;

template <std::size_t D>
using Vec = std::array<double, D>;
template <std::size_t D>
using Mat = std::array<std::array<double, D>, D>;  // row-major small matrix

template <std::size_t D>
inline double dot(const Vec<D>& a, const Vec<D>& b) {
  double s = 0;
  for (std::size_t i = 0; i < D; ++i) s += a[i] * b[i];
  return s;
}

template <std::size_t D>
inline double norm(const Vec<D>& a) {
  return std::sqrt(dot(a, a));
}

template <std::size_t D>
inline Vec<D> vadd(const Vec<D>& a, const Vec<D>& b) {
  Vec<D> r{};
  for (std::size_t i = 0; i < D; ++i) r[i] = a[i] + b[i];
  return r;
}

template <std::size_t D>
inline Vec<D> vsub(const Vec<D>& a, const Vec<D>& b) {
  Vec<D> r{};
  for (std::size_t i = 0; i < D; ++i) r[i] = a[i] - b[i];
  return r;
}

template <std::size_t D>
inline Vec<D> vscale(double c, const Vec<D>& a) {
  Vec<D> r{};
  for (std::size_t i = 0; i < D; ++i) r[i] = c * a[i];
  return r;
}

// y = M x for the small per-node matrices (row-major).
template <std::size_t D>
inline Vec<D> matvec(const Mat<D>& m, const Vec<D>& x) {
  Vec<D> r{};
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) r[i] += m[i][j] * x[j];
  return r;
}

// y = M^T x.
template <std::size_t D>
inline Vec<D> matvec_t(const Mat<D>& m, const Vec<D>& x) {
  Vec<D> r{};
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) r[i] += m[j][i] * x[j];
  return r;
}

// ---------------------------------------------------------------------------
// TorusGrid: N uniform nodes per dimension on the torus of side `radius`.
// ---------------------------------------------------------------------------
template <std::size_t D>
struct TorusGrid {
  static_assert(D == 1 || D == 2, "only d = 1 and d = 2 are supported");

  int n = 0;           // points per dimension
  double radius = 0;   // side length a of the torus
  double h = 0;        // spacing a/N

  TorusGrid() = default;
  TorusGrid(int points_per_dim, double side) : n(points_per_dim), radius(side), h(side / points_per_dim) {
    if (points_per_dim <= 0) throw ParameterError("TorusGrid: points_per_dim must be positive");
    if (!(side > 0)) throw ParameterError("TorusGrid: radius must be positive");
  }

  std::size_t num_nodes() const {
    std::size_t m = 1;
    for (std::size_t i = 0; i < D; ++i) m *= static_cast<std::size_t>(n);
    return m;
  }

  int wrap(int i) const {
    i %= n;
    return i < 0 ? i + n : i;
  }

  // Row-major flattening: node = i0*N + i1 in 2D, node = i0 in 1D.
  std::size_t flatten(const std::array<int, D>& idx) const {
    std::size_t node = 0;
    for (std::size_t i = 0; i < D; ++i) node = node * static_cast<std::size_t>(n) + static_cast<std::size_t>(wrap(idx[i]));
    return node;
  }

  std::array<int, D> unflatten(std::size_t node) const {
    std::array<int, D> idx{};
    for (std::size_t i = D; i-- > 0;) {
      idx[i] = static_cast<int>(node % static_cast<std::size_t>(n));
      node /= static_cast<std::size_t>(n);
    }
    return idx;
  }

  Vec<D> coord(std::size_t node) const {
    auto idx = unflatten(node);
    Vec<D> x{};
    for (std::size_t i = 0; i < D; ++i) x[i] = -0.5 * radius + idx[i] * h;
    return x;
  }

  // Neighbor of `node` at offset `step` grid cells along dimension `dim`.
  std::size_t neighbor(std::size_t node, int dim, int step) const {
    auto idx = unflatten(node);
    idx[dim] = wrap(idx[dim] + step);
    return flatten(idx);
  }

  bool operator==(const TorusGrid& o) const { return n == o.n && radius == o.radius; }
  bool operator!=(const TorusGrid& o) const { return !(*this == o); }
};

// ---------------------------------------------------------------------------
// TimeGrid: M uniform steps on [0, T], nodes t_n = n*dt.
// ---------------------------------------------------------------------------
struct TimeGrid {
  double horizon = 0;  // T
  int steps = 0;       // M
  double dt = 0;       // T/M

  TimeGrid() = default;
  TimeGrid(double T, int M) : horizon(T), steps(M), dt(T / M) {
    if (!(T > 0)) throw ParameterError("TimeGrid: horizon must be positive");
    if (M <= 0) throw ParameterError("TimeGrid: steps must be positive");
  }
  double node(int n) const { return n * dt; }
};

// ---------------------------------------------------------------------------
// GridField: c real components sampled at every node (c = 1 scalars, c = D
// vectors). Storage is node-major: values[node*c + comp].
// ---------------------------------------------------------------------------
template <std::size_t D>
struct GridField {
  TorusGrid<D> grid;
  int components = 1;
  std::vector<double> values;

  GridField() = default;
  GridField(const TorusGrid<D>& g, int c) : grid(g), components(c), values(g.num_nodes() * c, 0.0) {
    if (c != 1 && c != static_cast<int>(D)) throw ShapeError("GridField: components must be 1 or d");
  }

  static GridField zeros(const TorusGrid<D>& g, int c = 1) { return GridField(g, c); }

  static GridField constant(const TorusGrid<D>& g, double v) {
    GridField f(g, 1);
    for (auto& e : f.values) e = v;
    return f;
  }

  static GridField sample_scalar(const TorusGrid<D>& g, const std::function<double(Vec<D>)>& fn) {
    GridField f(g, 1);
    for (std::size_t j = 0; j < g.num_nodes(); ++j) f.values[j] = fn(g.coord(j));
    return f;
  }

  static GridField sample_vector(const TorusGrid<D>& g, const std::function<Vec<D>(Vec<D>)>& fn) {
    GridField f(g, D);
    for (std::size_t j = 0; j < g.num_nodes(); ++j) f.set_vec(j, fn(g.coord(j)));
    return f;
  }

  bool is_scalar() const { return components == 1; }

  double& operator()(std::size_t node, int comp = 0) { return values[node * components + comp]; }
  double operator()(std::size_t node, int comp = 0) const { return values[node * components + comp]; }

  Vec<D> vec(std::size_t node) const {
    Vec<D> v{};
    for (int c = 0; c < components; ++c) v[c] = values[node * components + c];
    return v;
  }
  void set_vec(std::size_t node, const Vec<D>& v) {
    for (int c = 0; c < components; ++c) values[node * components + c] = v[c];
  }

  double max_abs() const {
    double m = 0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }

  // Max over nodes of the euclidean length of the per-node component vector.
  double max_norm() const {
    double m = 0;
    for (std::size_t j = 0; j < grid.num_nodes(); ++j) m = std::max(m, norm<D>(vec(j)));
    return m;
  }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_finite(const char* who) const {
    if (!all_finite()) throw NumericError(std::string(who) + ": non-finite field values", {}, 0.0, 0);
  }
};

template <std::size_t D>
inline void require_same_grid(const TorusGrid<D>& a, const TorusGrid<D>& b, const char* who) {
  if (a != b) throw ShapeError(std::string(who) + ": grid mismatch");
}

// ---------------------------------------------------------------------------
// DensityPath: one nonnegative scalar slice per time node (M+1 slices).
// ---------------------------------------------------------------------------
template <std::size_t D>
struct DensityPath {
  TorusGrid<D> grid;
  TimeGrid time;
  std::vector<GridField<D>> slices;  // size steps+1

  DensityPath() = default;
  DensityPath(const TorusGrid<D>& g, const TimeGrid& t)
      : grid(g), time(t), slices(static_cast<std::size_t>(t.steps) + 1, GridField<D>(g, 1)) {}

  GridField<D>& operator[](int n) { return slices[static_cast<std::size_t>(n)]; }
  const GridField<D>& operator[](int n) const { return slices[static_cast<std::size_t>(n)]; }

  double mass(int n) const {
    const auto& s = slices[static_cast<std::size_t>(n)];
    double acc = 0;
    for (double v : s.values) acc += v;
    return acc * cell_volume();
  }

  double min_value(int n) const {
    const auto& s = slices[static_cast<std::size_t>(n)];
    double m = s.values.empty() ? 0.0 : s.values[0];
    for (double v : s.values) m = std::min(m, v);
    return m;
  }

  double cell_volume() const {
    double v = 1;
    for (std::size_t i = 0; i < D; ++i) v *= grid.h;
    return v;
  }
};

// h^d (cell volume) for a grid.
template <std::size_t D>
inline double cell_volume(const TorusGrid<D>& g) {
  double v = 1;
  for (std::size_t i = 0; i < D; ++i) v *= g.h;
  return v;
}

// ---------------------------------------------------------------------------
// Quadrature: integrate(field, weight) = h^d * sum_x field(x) * weight(x),
// one value per component. The uniform overload uses weight = 1.
// ---------------------------------------------------------------------------
template <std::size_t D>
inline Vec<D> integrate(const GridField<D>& f, const GridField<D>& weight) {
  require_same_grid(f.grid, weight.grid, "integrate");
  if (!weight.is_scalar()) throw ShapeError("integrate: weight must be scalar");
  Vec<D> acc{};
  const std::size_t nn = f.grid.num_nodes();
  for (std::size_t j = 0; j < nn; ++j) {
    const double w = weight(j);
    for (int c = 0; c < f.components; ++c) acc[c] += f(j, c) * w;
  }
  return vscale<D>(cell_volume(f.grid), acc);
}

template <std::size_t D>
inline Vec<D> integrate(const GridField<D>& f) {
  Vec<D> acc{};
  const std::size_t nn = f.grid.num_nodes();
  for (std::size_t j = 0; j < nn; ++j)
    for (int c = 0; c < f.components; ++c) acc[c] += f(j, c);
  return vscale<D>(cell_volume(f.grid), acc);
}

// Scalar convenience: first (only) component.
template <std::size_t D>
inline double integrate_scalar(const GridField<D>& f, const GridField<D>& weight) {
  if (!f.is_scalar()) throw ShapeError("integrate_scalar: field must be scalar");
  return integrate(f, weight)[0];
}

template <std::size_t D>
inline double integrate_scalar(const GridField<D>& f) {
  if (!f.is_scalar()) throw ShapeError("integrate_scalar: field must be scalar");
  return integrate(f)[0];
}

// ---------------------------------------------------------------------------
// Finite-difference stencils. All are periodic.
// ---------------------------------------------------------------------------

enum class GradientScheme { central, upwind };

// Central gradient: component i at x is (u(x+h e_i) - u(x-h e_i)) / (2h).
template <std::size_t D>
inline GridField<D> gradient_central(const GridField<D>& u) {
  if (!u.is_scalar()) throw ShapeError("gradient: field must be scalar");
  GridField<D> g(u.grid, D);
  const double inv2h = 1.0 / (2.0 * u.grid.h);
  for (std::size_t j = 0; j < u.grid.num_nodes(); ++j)
    for (std::size_t i = 0; i < D; ++i)
      g(j, i) = (u(u.grid.neighbor(j, i, +1)) - u(u.grid.neighbor(j, i, -1))) * inv2h;
  return g;
}

// Upwind gradient against an advection direction field: where dir_i >= 0 the
// flow carries information from the left, so the one-sided difference looks
// backward; where dir_i < 0 it looks forward.
template <std::size_t D>
inline GridField<D> gradient_upwind(const GridField<D>& u, const GridField<D>& dir) {
  if (!u.is_scalar()) throw ShapeError("gradient: field must be scalar");
  require_same_grid(u.grid, dir.grid, "gradient_upwind");
  if (dir.components != static_cast<int>(D)) throw ShapeError("gradient_upwind: direction field must have d components");
  GridField<D> g(u.grid, D);
  const double invh = 1.0 / u.grid.h;
  for (std::size_t j = 0; j < u.grid.num_nodes(); ++j)
    for (std::size_t i = 0; i < D; ++i) {
      if (dir(j, i) >= 0)
        g(j, i) = (u(j) - u(u.grid.neighbor(j, i, -1))) * invh;
      else
        g(j, i) = (u(u.grid.neighbor(j, i, +1)) - u(j)) * invh;
    }
  return g;
}

template <std::size_t D>
inline GridField<D> gradient(const GridField<D>& u, GradientScheme scheme,
                             const GridField<D>* dir = nullptr) {
  if (scheme == GradientScheme::central) return gradient_central(u);
  if (dir == nullptr) throw ShapeError("gradient: upwind scheme needs a direction field");
  return gradient_upwind(u, *dir);
}

// (2d+1)-point laplacian: sum_i (u(x+h e_i) - 2u(x) + u(x-h e_i)) / h^2.
template <std::size_t D>
inline GridField<D> laplacian(const GridField<D>& u) {
  if (!u.is_scalar()) throw ShapeError("laplacian: field must be scalar");
  GridField<D> r(u.grid, 1);
  const double invh2 = 1.0 / (u.grid.h * u.grid.h);
  for (std::size_t j = 0; j < u.grid.num_nodes(); ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < D; ++i)
      acc += u(u.grid.neighbor(j, i, +1)) - 2.0 * u(j) + u(u.grid.neighbor(j, i, -1));
    r(j) = acc * invh2;
  }
  return r;
}

// Central divergence, the adjoint of -gradient_central under the plain
// quadrature (used by the integration-by-parts property).
template <std::size_t D>
inline GridField<D> divergence_central(const GridField<D>& F) {
  if (F.components != static_cast<int>(D)) throw ShapeError("divergence: field must have d components");
  GridField<D> r(F.grid, 1);
  const double inv2h = 1.0 / (2.0 * F.grid.h);
  for (std::size_t j = 0; j < F.grid.num_nodes(); ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < D; ++i)
      acc += F(F.grid.neighbor(j, i, +1), i) - F(F.grid.neighbor(j, i, -1), i);
    r(j) = acc * inv2h;
  }
  return r;
}

// Half-step pair: forward-difference gradient (value lives at the x+h/2 e_i
// interface) and backward-difference divergence. Composing them reproduces
// the (2d+1)-point laplacian exactly, which is the compatibility the
// advection-diffusion scheme relies on.
template <std::size_t D>
inline GridField<D> gradient_forward(const GridField<D>& u) {
  if (!u.is_scalar()) throw ShapeError("gradient_forward: field must be scalar");
  GridField<D> g(u.grid, D);
  const double invh = 1.0 / u.grid.h;
  for (std::size_t j = 0; j < u.grid.num_nodes(); ++j)
    for (std::size_t i = 0; i < D; ++i)
      g(j, i) = (u(u.grid.neighbor(j, i, +1)) - u(j)) * invh;
  return g;
}

template <std::size_t D>
inline GridField<D> divergence_backward(const GridField<D>& F) {
  if (F.components != static_cast<int>(D)) throw ShapeError("divergence_backward: field must have d components");
  GridField<D> r(F.grid, 1);
  const double invh = 1.0 / F.grid.h;
  for (std::size_t j = 0; j < F.grid.num_nodes(); ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < D; ++i) acc += F(j, i) - F(F.grid.neighbor(j, i, -1), i);
    r(j) = acc * invh;
  }
  return r;
}

// Cyclic shift by whole grid cells (testing utility for equivariance checks).
template <std::size_t D>
inline GridField<D> shift(const GridField<D>& f,
                          const std::type_identity_t<std::array<int, D>>& offset) {
  GridField<D> r(f.grid, f.components);
  for (std::size_t j = 0; j < f.grid.num_nodes(); ++j) {
    auto idx = f.grid.unflatten(j);
    for (std::size_t i = 0; i < D; ++i) idx[i] = f.grid.wrap(idx[i] + offset[i]);
    const std::size_t k = f.grid.flatten(idx);
    for (int c = 0; c < f.components; ++c) r(k, c) = f(j, c);
  }
  return r;
}

// Numerical support of a density slice: nodes carrying at least mass_floor.
// The floor scales like 1e-12 * h^{-d} so that the ignored mass stays ~1e-12.
template <std::size_t D>
inline double mass_floor(const TorusGrid<D>& g) {
  return 1e-12 / cell_volume(g);
}

template <std::size_t D>
inline bool in_support(const GridField<D>& m, std::size_t node) {
  return m(node) > mass_floor(m.grid);
}

}  // namespace mfgc
