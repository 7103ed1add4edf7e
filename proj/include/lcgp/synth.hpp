#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lcgp/core.hpp"
#include "lcgp/model.hpp"

namespace lcgp {

/// Three outputs on [-1, 1] whose coupling switches at `switch_at`.
///
/// Outputs are amplitude * L g(x), where g holds three smooth Gaussian-kernel
/// draws made orthonormal (uncentered) on each side of the switch, and L is
/// the Cholesky factor of c_pre or c_post. The noiseless outputs therefore
/// have uncentered correlation exactly c_pre / c_post on each side.
struct SwitchSpec {
  Index n = 100;
  double switch_at = 0.0;
  MatrixXd c_pre;   // empty selects off-diagonals 0.9
  MatrixXd c_post;  // empty selects c_pre with output 2's coupling negated
  double base_lengthscale = 0.3;
  double amplitude = std::sqrt(1.92);
  double noise_sd = 1.0;
  std::uint64_t seed = 0;

  SwitchSpec resolved() const;  // fills the default matrices
  void validate() const;
};

struct SwitchData {
  Dataset data;    // one sample, 3 x n
  MatrixXd truth;  // noiseless outputs, 3 x n
};

SwitchData gen_switch(const SwitchSpec& spec);

/// Toy recovery data: S latent draws from K (x) Sigma_true mapped one-to-one
/// onto M = Q outputs plus white noise.
struct ToySpec {
  Index q = 2;
  Index s = 10;
  Index n = 50;
  MatrixXd sigma_true;  // empty selects a normalized Wishart draw
  double noise_sd = 0.1;
  double lengthscale = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ToyData {
  Dataset data;
  MatrixXd sigma_true;  // Q x Q
  MatrixXd mixing;      // M x Q binary
  MatrixXd latent_cov;  // NQ x NQ generative covariance K (x) Sigma_true
};

ToyData gen_toy(const ToySpec& spec);

// Correlation matrix from a Wishart(I, dof) draw.
MatrixXd random_correlation(Index q, Index dof, std::uint64_t seed);

/// Smooth multi-channel data from a latent correlation model with known
/// parameters: distinct signal lengthscales, a prior draw of Z and smooth
/// mixing rows. Used as the base dataset for resampling studies.
struct MixtureSpec {
  Index n = 40;
  Index m = 6;
  Index s = 50;
  Index q = 3;
  std::vector<double> lengthscales;  // empty selects a spread in [0.15, 0.6]
  double lengthscale_z = 1.0;
  double lengthscale_b = 1.0;
  double noise_sd = 0.3;
  std::uint64_t seed = 0;
};

Dataset gen_mixture(const MixtureSpec& spec);

// Draws a fresh dataset from the generative chain of a fitted model. The
// sample count defaults to the model's.
Dataset resample_from_model(const FittedModel& model, std::uint64_t seed,
                            Index n_samples = 0);

struct RecoveryScore {
  double score = 0.0;
  std::vector<Index> permutation;  // signal p of the estimate maps to slot p
};

RecoveryScore recovery_score(const MatrixXd& c_true, const MatrixXd& c_est, Index q);

// Applies a signal permutation to an input-major block matrix:
// out(iQ + p, jQ + r) = c(iQ + perm[p], jQ + perm[r]).
MatrixXd permute_signals(const MatrixXd& c, const std::vector<Index>& perm);

struct ErrorMetrics {
  double mae = 0.0;
  double mse = 0.0;
};

ErrorMetrics metrics(const MatrixXd& pred, const MatrixXd& truth);
// Labels in {-1, +1} (or {0, 1}); ties receive midranks.
double auc(const VectorXd& scores, const VectorXd& labels);
double fisher_statistic(const std::vector<double>& pvals);
double fisher_combine(const std::vector<double>& pvals);

// Null distribution of recovery scores from Z drawn from its prior.
std::vector<double> null_scores(const MatrixXd& c_true, const MatrixXd& k_q,
                                const MatrixXd& kz_lower, Index q, Index nu,
                                int n_draws, std::uint64_t seed);
double empirical_pvalue(double observed, const std::vector<double>& null);
double empirical_pvalue(double observed, const MatrixXd& c_true,
                        const FittedModel& model, int n_draws, std::uint64_t seed);

}  // namespace lcgp
