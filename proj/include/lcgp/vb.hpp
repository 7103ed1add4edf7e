#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lcgp/core.hpp"
#include "lcgp/kernels.hpp"
#include "lcgp/linalg.hpp"
#include "lcgp/zopt.hpp"

namespace lcgp {

struct FittedModel;

struct GammaPosterior {
  double shape = 1.0;
  double rate = 1.0;
  double mean() const { return shape / rate; }
  double mean_log() const;
  double entropy() const;
  // E_q[log Gamma(x | prior)].
  double expected_log_prior(const GammaPrior& prior) const;
};

/// Moments of every factor of the mean-field posterior.
///
/// Vectors over latent values use the input-major layout (i * Q + p).
/// Column s of `mu_u` is the mean of q(u_s); column m of `mu_b` is the mean
/// of row m of the mixing matrix. Sigma_u is shared by all samples and
/// Sigma_b by all rows.
struct VariationalState {
  MatrixXd mu_u;     // NQ x S
  MatrixXd sigma_u;  // NQ x NQ
  double log_det_sigma_u = 0.0;

  MatrixXd mu_b;     // NQ x M
  MatrixXd sigma_b;  // NQ x NQ
  double log_det_sigma_b = 0.0;

  GammaPosterior omega_f;

  bool classification = false;
  VectorXd mu_wb;     // NQ + 1, bias last
  MatrixXd sigma_wb;  // (NQ + 1)^2
  double log_det_sigma_wb = 0.0;
  GammaPosterior lambda_w;
  GammaPosterior lambda_b;
  VectorXd h_location;  // g_s
  VectorXd h_mean;      // <h_s>
  VectorXd h_second;    // <h_s^2>

  WishartFactor z;
  double omega_u = 1.0;
  std::vector<double> lengthscales;
};

struct FitConfig {
  int max_iters = 200;
  double tol = 1e-6;  // relative ELBO change per sweep
  bool classification = false;
  int inner_iters = 20;
  unsigned long seed = 0;
  Index q = 2;
  Index nu = 0;  // 0 selects nu = Q
  bool standardize = true;
  bool map_inputs = false;
  bool optimize_omega_u = true;
  bool optimize_lengthscales = false;
  // Records the ELBO after every individual factor update (slower).
  bool check_each_update = false;
};

struct TraceRecord {
  int iteration = 0;
  double elbo = 0.0;
  std::map<std::string, double> seconds;  // per factor update
  // Filled only with FitConfig::check_each_update, in update order.
  std::vector<std::pair<std::string, double>> elbo_after;
};

struct TruncatedMoments {
  double mean = 0.0;
  double second = 0.0;
  double variance = 0.0;
};

// Block-diagonal <B^T B> (NQ x NQ) from the mixing posterior.
MatrixXd expected_btb(const VariationalState& state, const Dims& dims);

/// Moments of N(g, 1) truncated to r * h > 0.
TruncatedMoments tn_moments(double g, double r);

struct ElboTerms {
  std::map<std::string, double> terms;
  double total() const;
};

/// Coordinate-ascent engine over the factors of the posterior.
///
/// Operates on already standardized data. Each update_* call replaces one
/// factor by its optimum given the others; elbo() evaluates the bound for the
/// current factors.
class VbEngine {
 public:
  VbEngine(const Dataset& data, const HyperParams& hyper, const FitConfig& cfg);

  void initialize();

  void update_u();
  void update_z();
  void update_h();
  void update_wb();
  void update_lambda();
  void update_b();
  void update_omega_f();
  void sweep(TraceRecord* record = nullptr);

  double elbo() const;
  ElboTerms elbo_terms() const;

  const VariationalState& state() const { return state_; }
  VariationalState& mutable_state() { return state_; }
  const Dims& dims() const { return dims_; }
  const MatrixXd& k_q() const { return k_q_; }
  const MatrixXd& kb_lower() const { return kb_lower_; }
  const MatrixXd& kz_lower() const { return kz_lower_; }
  const JointKernel& joint() const { return joint_; }
  const Dataset& data() const { return data_; }
  const HyperParams& hyper() const { return hyper_; }

  // Block-diagonal <B^T B> (NQ x NQ).
  MatrixXd expected_btb() const;
  // <B>^T y_s for every sample (NQ x S).
  MatrixXd expected_bt_y() const;
  // sum_s E||y_s - B u_s||^2.
  double expected_residual() const;
  // sum_s <u_s u_s^T>.
  MatrixXd latent_second_moment() const;
  ZObjectiveContext z_context() const;

  // Flips signals whose mixing column sums are negative. Leaves the ELBO
  // unchanged.
  void canonicalize_signs();

  // Recomputes the joint kernel after Z, omega_u or lengthscales change.
  void refresh_joint();

 private:
  Dataset data_;
  HyperParams hyper_;
  FitConfig cfg_;
  Dims dims_;
  MatrixXd k_q_;
  MatrixXd kb_lower_;  // N x N, jittered prior of B rows
  MatrixXd kz_lower_;  // N x N, jittered prior of Z columns
  double log_det_kb_ = 0.0;
  double log_det_kz_ = 0.0;
  JointKernel joint_;
  VariationalState state_;
};

// Runs the full outer loop. `on_record` receives every trace record.
FittedModel fit(const Dataset& data, const HyperParams& hyper,
                const FitConfig& cfg,
                const std::function<void(const TraceRecord&)>& on_record = {});

}  // namespace lcgp
