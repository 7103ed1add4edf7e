#pragma once

#include <functional>

#include "lcgp/core.hpp"

namespace lcgp {

struct LbfgsOptions {
  int max_iters = 20;
  int memory = 10;
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.9;   // curvature
  double grad_tol = 1e-8;
  double f_rel_tol = 1e-12;
  int max_line_search = 30;
};

struct LbfgsResult {
  VectorXd x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

// Returns f(x) and writes the gradient. A non-finite value marks x as
// infeasible; the line search then shrinks the step.
using Objective = std::function<double(const VectorXd& x, VectorXd& grad)>;

/// Limited-memory BFGS minimizer with a strong-Wolfe line search.
///
/// The returned point never has a larger objective than `x0`; on a line
/// search failure the best point seen so far is returned and
/// `line_search_failed` is set.
LbfgsResult lbfgs_minimize(const Objective& f, const VectorXd& x0,
                           const LbfgsOptions& opts = {});

}  // namespace lcgp
