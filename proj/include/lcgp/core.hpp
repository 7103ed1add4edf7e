#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lcgp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Raised when a factorization or update fails after all recovery attempts.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dims {
  Index N = 1;   // input points
  Index M = 1;   // output channels
  Index Q = 1;   // latent signals
  Index S = 1;   // observation sets
  Index nu = 1;  // Wishart degrees of freedom

  Index nq() const { return N * Q; }
  void validate() const;
};

// Input-major flat index of (input i, signal p): i * Q + p.
Index flatten(Index i, Index p, const Dims& dims);
std::pair<Index, Index> unflatten(Index flat, const Dims& dims);

/// Observations sharing one input grid.
///
/// `x` holds one input point per row (1 column for 1-D data, 2 for spatial
/// data). Each `y[s]` is M x N with column i holding the outputs at x.row(i).
struct Dataset {
  MatrixXd x;
  std::vector<MatrixXd> y;
  std::optional<VectorXd> labels;  // entries in {-1, +1}, one per sample
  std::vector<std::string> channel_names;

  Index n_inputs() const { return x.rows(); }
  Index n_channels() const { return y.empty() ? 0 : y.front().rows(); }
  Index n_samples() const { return static_cast<Index>(y.size()); }
  void validate() const;
};

struct NormStats {
  VectorXd mean;   // per channel
  VectorXd scale;  // per channel, population standard deviation

  MatrixXd apply(const MatrixXd& y) const;
  MatrixXd invert(const MatrixXd& y) const;
};

// Per-channel zero mean / unit variance pooled over samples and inputs.
std::pair<Dataset, NormStats> standardize(const Dataset& data);
Dataset destandardize(const Dataset& data, const NormStats& stats);

// Affine map of every input column onto [-1, 1]; returns (offset, scale)
// such that mapped = (x - offset) / scale.
struct InputMap {
  VectorXd offset;
  VectorXd scale;
  MatrixXd apply(const MatrixXd& x) const;
};
InputMap fit_input_map(const MatrixXd& x);

struct GammaPrior {
  double shape = 1e-3;
  double rate = 1e-3;
};

struct HyperParams {
  std::vector<double> lengthscales{0.5};  // one per latent signal
  double lengthscale_z = 1.0;
  double lengthscale_b = 1.0;
  GammaPrior omega_f;
  GammaPrior omega_u;
  GammaPrior lambda_w;
  GammaPrior lambda_b;
  double jitter = 1e-8;

  // Broadcasts a single lengthscale to Q signals.
  HyperParams with_signals(Index q) const;
  void validate(Index q) const;
};

// Worker count honoring LCGP_THREADS (defaults to hardware concurrency).
unsigned worker_count();

// Runs fn(k) for k in [0, n) on up to worker_count() threads. Each call must
// write only to its own slot so results do not depend on scheduling.
void parallel_for(Index n, const std::function<void(Index)>& fn);

}  // namespace lcgp
