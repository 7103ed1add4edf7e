#pragma once

#include <vector>

#include "lcgp/core.hpp"

namespace lcgp {

/// Exact GP regression with the Wishart-Gibbs joint kernel on directly
/// observed outputs (mixing fixed to the identity, so Q equals the number of
/// outputs). Z and the noise precision are MAP-estimated; the noise plays the
/// role of the latent ridge.
struct WgccExactOptions {
  std::vector<double> lengthscales{0.3};
  double lengthscale_z = 0.2;
  Index nu = 0;  // 0 selects nu = Q
  int max_iters = 200;
  double initial_noise = 0.5;
  double jitter = 1e-8;
};

struct ExactGpResult {
  MatrixXd fitted;  // M x N noiseless posterior mean at the training inputs
  double objective = 0.0;
  double noise_variance = 0.0;
  MatrixXd coupling;  // Z for WGCC, A for the Kronecker model
  double lengthscale = 0.0;
  int iterations = 0;
};

// `y` is M x N with outputs at the rows of `x`.
ExactGpResult fit_wgcc_exact(const MatrixXd& x, const MatrixXd& y,
                             const WgccExactOptions& opts = {});

/// Intrinsic coregionalization baseline: K(x, x') (x) A + sigma^2 I with a
/// squared-exponential K and free-form A = L L^T, all fitted by maximum
/// marginal likelihood.
struct KroneckerOptions {
  double initial_lengthscale = 0.3;
  double initial_noise = 0.5;
  int max_iters = 300;
};

ExactGpResult fit_kronecker(const MatrixXd& x, const MatrixXd& y,
                            const KroneckerOptions& opts = {});

// Log marginal likelihood of the Kronecker model and its gradient with
// respect to [vec(L) (column-major Q x Q), log l, log sigma^2].
double kronecker_log_likelihood(const MatrixXd& x, const MatrixXd& y,
                                const VectorXd& params, VectorXd* grad);

}  // namespace lcgp
