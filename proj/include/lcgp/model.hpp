#pragma once

#include <optional>
#include <vector>

#include "lcgp/core.hpp"
#include "lcgp/kernels.hpp"
#include "lcgp/vb.hpp"

namespace lcgp {

/// Everything needed to predict from a fitted model.
///
/// `x` holds the training inputs in the model's internal coordinates (after
/// the optional affine input map). Kernel caches are derived data and are
/// rebuilt by `rebuild_caches()` after loading.
struct FittedModel {
  Dims dims;
  HyperParams hyper;
  FitConfig config;
  MatrixXd x;
  std::optional<InputMap> input_map;
  NormStats norm;
  VariationalState state;

  std::vector<TraceRecord> trace;
  double initial_elbo = 0.0;
  int iterations = 0;
  bool converged = false;

  MatrixXd k_q;
  MatrixXd kb_lower;
  MatrixXd kz_lower;
  JointKernel joint;

  void rebuild_caches();
  MatrixXd to_internal_inputs(const MatrixXd& x_raw) const;
  // Z Z^T o K_Q: the fitted latent covariance without the latent noise ridge.
  MatrixXd latent_kernel() const;
};

// Jittered Cholesky factors shared by the engine and the fitted model.
MatrixXd prior_lower(const MatrixXd& k, double jitter, const char* what,
                     double* log_det = nullptr);

}  // namespace lcgp
