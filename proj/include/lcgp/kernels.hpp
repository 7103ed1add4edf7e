#pragma once

#include <vector>

#include "lcgp/core.hpp"
#include "lcgp/linalg.hpp"

namespace lcgp {

// Squared Euclidean distance between rows of x.
double squared_distance(const MatrixXd& a, Index i, const MatrixXd& b, Index j);

/// Non-stationary Gaussian kernel between input x of signal p and input x'
/// of signal q. Equal lengthscales reduce it to exp(-d^2 / (2 l^2)).
/// The prefactor carries the power input_dim / 2 so the block kernel stays
/// PSD for multi-dimensional inputs.
double gibbs(double sq_dist, double lp, double lq, Index input_dim = 1);
double gibbs(double x, double x2, double lp, double lq);

// P_pq = (2 l_p l_q / (l_p^2 + l_q^2))^(input_dim / 2).
MatrixXd prefactor_matrix(const std::vector<double>& lengthscales, Index input_dim = 1);

// NQ x NQ block matrix K_Q in input-major layout.
MatrixXd gibbs_block_matrix(const MatrixXd& x,
                            const std::vector<double>& lengthscales);
// Cross blocks between two input sets: (N1 Q) x (N2 Q).
MatrixXd gibbs_block_matrix(const MatrixXd& x1, const MatrixXd& x2,
                            const std::vector<double>& lengthscales);

// sigma2 * exp(-d^2 / (2 l^2)).
MatrixXd se_kernel_matrix(const MatrixXd& x, double lengthscale,
                          double variance);
MatrixXd se_kernel_matrix(const MatrixXd& x1, const MatrixXd& x2,
                          double lengthscale, double variance);

/// Latent GP values z_p(x_i) in R^nu stacked as an (NQ) x nu matrix.
///
/// The prior over each column is K_z (x) I_Q with K_z squared-exponential of
/// variance 1/nu, so that E[A(x)] = I.
struct WishartFactor {
  MatrixXd z;
  Index n_signals = 1;

  Index n_inputs() const { return z.rows() / n_signals; }
  Index nu() const { return z.cols(); }
  // Q x nu slab of rows belonging to input i.
  auto slab(Index i) const { return z.middleRows(i * n_signals, n_signals); }
};

MatrixXd wishart_block(const WishartFactor& f, Index i, Index j);

// Prior kernel K_z over inputs (N x N), variance 1/nu.
MatrixXd wishart_prior_kernel(const MatrixXd& x, double lengthscale_z, Index nu);

// z_p(x_i) = e_p padded with zeros; A(x_i) = I for nu >= Q.
WishartFactor identity_factor(Index n, Index q, Index nu);

struct JointKernel {
  MatrixXd k;  // ZZ^T o K_Q + omega_u^{-1} I
  double omega_u = 1.0;
  Factor chol;
};

// Hadamard product ZZ^T o K_Q without the ridge.
MatrixXd hadamard_kernel(const MatrixXd& z, const MatrixXd& k_q);
JointKernel joint_kernel(const WishartFactor& f, const MatrixXd& k_q,
                         double omega_u);

// Block (i, j) equals a * k(i, j): the input-major form of K (x) A.
MatrixXd kronecker_kernel(const MatrixXd& a, const MatrixXd& k);

// Applies (L (x) I_Q) to an (NQ) x c matrix, where l is N x N.
MatrixXd kron_identity_apply(const MatrixXd& l, const MatrixXd& v, Index q);
MatrixXd kron_identity_apply_transpose(const MatrixXd& l, const MatrixXd& v,
                                       Index q);
// Solves (L (x) I_Q) X = v for lower-triangular l.
MatrixXd kron_identity_solve_lower(const MatrixXd& l, const MatrixXd& v,
                                   Index q);
// Solves (L (x) I_Q)^T X = v.
MatrixXd kron_identity_solve_lower_transpose(const MatrixXd& l, const MatrixXd& v,
                                             Index q);

}  // namespace lcgp
