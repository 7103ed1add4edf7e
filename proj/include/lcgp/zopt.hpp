#pragma once

#include <vector>

#include "lcgp/core.hpp"
#include "lcgp/kernels.hpp"
#include "lcgp/lbfgs.hpp"

namespace lcgp {

/// Frozen quantities for one inner optimization of the Wishart factor.
///
/// `second_moment` is sum_s <u_s u_s^T>; `kz_lower` is the N x N Cholesky
/// factor of the (jittered) Wishart prior kernel, so the full prior factor is
/// kz_lower (x) I_Q.
struct ZObjectiveContext {
  MatrixXd second_moment;
  Index n_samples = 1;
  MatrixXd k_q;
  MatrixXd kz_lower;
  Index n_signals = 1;
  GammaPrior omega_u_prior;
  bool include_omega_prior = false;
};

struct ZEvaluation {
  double value = 0.0;
  MatrixXd grad_z;             // d value / dZ
  MatrixXd grad_z_hat;         // d value / dZ_hat, whitened coordinates
  double grad_log_omega = 0.0;  // d value / d log(omega_u)
  bool feasible = true;
};

double z_objective(const MatrixXd& z, double omega_u,
                   const ZObjectiveContext& ctx);
MatrixXd z_gradient(const MatrixXd& z, double omega_u,
                    const ZObjectiveContext& ctx);
// Value and both gradients in one pass. Infeasible (non-PD joint kernel)
// points come back with feasible = false and value = -inf.
ZEvaluation evaluate_z(const MatrixXd& z, double omega_u,
                       const ZObjectiveContext& ctx, bool with_gradient);

// Z_hat = (L (x) I_Q)^{-1} Z and its inverse.
MatrixXd whiten(const MatrixXd& z, const MatrixXd& kz_lower, Index q);
MatrixXd unwhiten(const MatrixXd& z_hat, const MatrixXd& kz_lower, Index q);
// d/dZ_hat = (L (x) I_Q)^T d/dZ.
MatrixXd whiten_gradient(const MatrixXd& grad_z, const MatrixXd& kz_lower,
                         Index q);

struct ZOptOptions {
  int max_iters = 20;
  bool optimize_omega = true;
};

struct ZOptResult {
  MatrixXd z;
  double omega_u = 1.0;
  double objective_before = 0.0;
  double objective_after = 0.0;
  int iterations = 0;
  bool warning = false;  // line search gave up; best point returned
};

ZOptResult optimize_z(const MatrixXd& z0, double omega_u0,
                      const ZObjectiveContext& ctx,
                      const ZOptOptions& opts = {});

struct LengthscaleSearch {
  bool enabled = false;
  double lower = 1e-3;
  double upper = 1e3;
  int iterations = 40;
};

// Golden-section search per signal lengthscale on the same objective.
// Returns the improved lengthscales (or the input when disabled or when no
// candidate improves the objective).
std::vector<double> optimize_lengthscales(
    const MatrixXd& z, double omega_u, const MatrixXd& x,
    const std::vector<double>& lengthscales, ZObjectiveContext ctx,
    const LengthscaleSearch& search);

}  // namespace lcgp
