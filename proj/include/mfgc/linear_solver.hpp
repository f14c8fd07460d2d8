// Sparse direct solves.  All implicit time steps in this library go through
// an exact LU factorization: the systems are small (one spatial grid), often
// reused across many right-hand sides, and an iterative solver would put a
// method tolerance inside every convergence study.  solve_checked guards each
// solve with an infinity-norm residual test so a silently bad factorization
// surfaces as an exception instead of as a corrupted time step.

#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <cstdio>
#include <vector>

#include "mfgc/errors.hpp"

namespace mfgc {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

class DirectSolver {
 public:
  DirectSolver() = default;
  explicit DirectSolver(SparseMatrix a) { factorize(std::move(a)); }

  DirectSolver(const DirectSolver&) = delete;
  DirectSolver& operator=(const DirectSolver&) = delete;

  void factorize(SparseMatrix a) {
    if (a.rows() != a.cols()) throw ShapeError("DirectSolver: matrix must be square");
    if (a.rows() == 0) throw ShapeError("DirectSolver: matrix must be nonempty");
    a_ = std::move(a);
    a_.makeCompressed();
    lu_.compute(a_);
    if (lu_.info() != Eigen::Success)
      throw NumericError("DirectSolver: sparse LU factorization failed", {}, 0.0, 0);
    ready_ = true;
  }

  bool ready() const { return ready_; }
  const SparseMatrix& matrix() const { return a_; }

  std::vector<double> solve(const std::vector<double>& rhs) const {
    require_ready(rhs);
    Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    Eigen::VectorXd x = lu_.solve(b);
    if (lu_.info() != Eigen::Success)
      throw NumericError("DirectSolver: sparse LU back substitution failed", {}, 0.0, 0);
    return std::vector<double>(x.data(), x.data() + x.size());
  }

  // Solve and verify ||A x - b||_inf <= tol * (1 + ||b||_inf).
  std::vector<double> solve_checked(const std::vector<double>& rhs, double tol = 1e-9) const {
    std::vector<double> x = solve(rhs);
    Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const double defect = (a_ * xv - b).cwiseAbs().maxCoeff();
    const double allowed = tol * (1.0 + b.cwiseAbs().maxCoeff());
    if (!(defect <= allowed)) {
      char msg[128];
      std::snprintf(msg, sizeof msg, "DirectSolver: solve residual %.3e exceeds %.3e", defect,
                    allowed);
      throw NumericError(msg, {}, defect, 0);
    }
    return x;
  }

 private:
  void require_ready(const std::vector<double>& rhs) const {
    if (!ready_) throw ParameterError("DirectSolver: factorize before solving");
    if (static_cast<Eigen::Index>(rhs.size()) != a_.rows())
      throw ShapeError("DirectSolver: right-hand side length mismatch");
  }

  SparseMatrix a_;
  Eigen::SparseLU<SparseMatrix> lu_;
  bool ready_ = false;
};

}  // namespace mfgc
