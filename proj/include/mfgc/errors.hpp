#pragma once
// Exception types thrown by the solver. Each carries enough context to locate
// the failure (config line, time index, residual history) without a debugger.

#include <stdexcept>
#include <string>
#include <vector>

namespace mfgc {

// Mismatched grids / field shapes between operands.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numeric parameter outside its documented range.
struct ParameterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inner convex minimization (conjugate evaluation) failed to converge.
// Carries the best iterate and its gradient norm for post-mortem.
struct NumericError : std::runtime_error {
  std::vector<double> best_iterate;
  double gradient_norm = 0.0;
  int iterations = 0;
  NumericError(const std::string& what, std::vector<double> best, double gnorm, int iters)
      : std::runtime_error(what), best_iterate(std::move(best)), gradient_norm(gnorm), iterations(iters) {}
};

// Per-time-node fixed point on the joint state-control law did not converge.
struct FixedPointError : std::runtime_error {
  std::vector<double> residual_history;
  FixedPointError(const std::string& what, std::vector<double> history)
      : std::runtime_error(what), residual_history(std::move(history)) {}
};

// A PDE time step failed (linear solve breakdown, NaN, negative density under
// the erroring clamp policy). time_index is the step that failed.
struct StepError : std::runtime_error {
  int time_index = -1;
  StepError(const std::string& what, int n) : std::runtime_error(what), time_index(n) {}
};

// Config file rejected: carries the 1-based line of the offending entry
// (0 when the problem is file-level, e.g. a missing required key).
struct ConfigError : std::runtime_error {
  int line = 0;
  ConfigError(const std::string& what, int line_ = 0) : std::runtime_error(what), line(line_) {}
};

}  // namespace mfgc
