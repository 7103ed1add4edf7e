#pragma once

#include <string>

#include <Eigen/Dense>

#include "lcgp/core.hpp"

namespace lcgp {

using Llt = Eigen::LLT<MatrixXd>;

/// Cholesky factorization with the project jitter policy.
///
/// Prior kernel matrices always receive `base_jitter * mean(diag)` on the
/// diagonal. If the factorization fails the jitter grows by x10 until it
/// reaches 1e-4 * mean(diag), after which NumericError is raised naming
/// `what`. Matrices that already carry a ridge (the joint latent kernel)
/// are attempted without jitter first by passing `base_jitter = 0`.
struct Factor {
  Llt llt;
  double jitter_added = 0.0;  // absolute amount added to the diagonal
  MatrixXd lower() const { return llt.matrixL(); }
  double log_det() const;
};

Factor robust_cholesky(const MatrixXd& a, double base_jitter,
                       const std::string& what);

// Adds the jitter recorded in `f` to a copy of `a`.
MatrixXd with_jitter(const MatrixXd& a, const Factor& f);

double max_asymmetry(const MatrixXd& a);
double min_eigenvalue(const MatrixXd& a);

// Standard normal helpers that stay accurate deep in the tails.
double normal_pdf(double t);
double normal_cdf(double t);
double log_normal_cdf(double t);
// phi(t) / Phi(t), the inverse Mills ratio.
double inverse_mills(double t);

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace lcgp
