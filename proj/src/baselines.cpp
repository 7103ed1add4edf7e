#include "lcgp/baselines.hpp"

#include <cmath>
#include <limits>

#include "lcgp/kernels.hpp"
#include "lcgp/lbfgs.hpp"
#include "lcgp/linalg.hpp"
#include "lcgp/zopt.hpp"

namespace lcgp {

namespace {

VectorXd stack_outputs(const MatrixXd& y) {
  return Eigen::Map<const VectorXd>(y.data(), y.size());  // column i = input i
}

MatrixXd unstack_outputs(const VectorXd& v, Index m) {
  return Eigen::Map<const MatrixXd>(v.data(), m, v.size() / m);
}

void check_shapes(const MatrixXd& x, const MatrixXd& y) {
  if (x.rows() == 0 || y.cols() != x.rows()) {
    throw std::invalid_argument("outputs have " + std::to_string(y.cols()) +
                                " columns but there are " + std::to_string(x.rows()) +
                                " inputs");
  }
}

}  // namespace

ExactGpResult fit_wgcc_exact(const MatrixXd& x, const MatrixXd& y,
                             const WgccExactOptions& opts) {
  check_shapes(x, y);
  const Index q = y.rows(), n = x.rows();
  const Index nu = opts.nu > 0 ? opts.nu : q;
  std::vector<double> ls = opts.lengthscales;
  if (ls.size() == 1) ls.assign(q, ls.front());
  if (Index(ls.size()) != q) throw std::invalid_argument("one lengthscale per output required");

  const VectorXd v = stack_outputs(y);
  ZObjectiveContext ctx;
  ctx.second_moment = v * v.transpose();
  ctx.n_samples = 1;
  ctx.k_q = gibbs_block_matrix(x, ls);
  ctx.kz_lower = robust_cholesky(wishart_prior_kernel(x, opts.lengthscale_z, nu),
                                 opts.jitter, "Wishart prior kernel").lower();
  ctx.n_signals = q;

  ZOptOptions zo;
  zo.max_iters = opts.max_iters;
  const WishartFactor z0 = identity_factor(n, q, nu);
  const ZOptResult r = optimize_z(z0.z, 1.0 / opts.initial_noise, ctx, zo);

  MatrixXd k = hadamard_kernel(r.z, ctx.k_q);
  const MatrixXd signal = k;
  k.diagonal().array() += 1.0 / r.omega_u;
  const Factor f = robust_cholesky(k, 0.0, "WGCC joint kernel");
  ExactGpResult out;
  out.fitted = unstack_outputs(signal * f.llt.solve(v), q);
  out.objective = r.objective_after;
  out.noise_variance = 1.0 / r.omega_u;
  out.coupling = r.z;
  out.iterations = r.iterations;
  return out;
}

double kronecker_log_likelihood(const MatrixXd& x, const MatrixXd& y,
                                const VectorXd& params, VectorXd* grad) {
  check_shapes(x, y);
  const Index q = y.rows(), n = x.rows(), nq = n * q;
  if (params.size() != q * q + 2) throw std::invalid_argument("Kronecker parameter size");
  const MatrixXd l = Eigen::Map<const MatrixXd>(params.data(), q, q);
  const double ell = std::exp(params(q * q));
  const double noise = std::exp(params(q * q + 1));
  const MatrixXd a = l * l.transpose();
  const MatrixXd kx = se_kernel_matrix(x, ell, 1.0);
  MatrixXd k = kronecker_kernel(a, kx);
  k.diagonal().array() += noise;
  Llt llt(k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const VectorXd v = stack_outputs(y);
  const VectorXd alpha = llt.solve(v);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double value = -0.5 * (v.dot(alpha) + log_det + double(nq) * kLog2Pi);
  if (!grad) return value;

  // dL/dtheta = 1/2 tr(W dK/dtheta), W = alpha alpha^T - K^{-1}.
  const MatrixXd w = alpha * alpha.transpose() - llt.solve(MatrixXd::Identity(nq, nq));
  MatrixXd g_a = MatrixXd::Zero(q, q);
  double g_ell = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const auto wb = w.block(i * q, j * q, q, q);
      g_a += 0.5 * kx(i, j) * wb;
      const double d2 = squared_distance(x, i, x, j);
      g_ell += 0.5 * kx(i, j) * (d2 / (ell * ell)) * wb.cwiseProduct(a).sum();
    }
  }
  const MatrixXd g_l = (g_a + g_a.transpose()) * l;
  grad->resize(params.size());
  grad->head(q * q) = Eigen::Map<const VectorXd>(g_l.data(), q * q);
  (*grad)(q * q) = g_ell;
  (*grad)(q * q + 1) = 0.5 * noise * w.trace();
  return value;
}

ExactGpResult fit_kronecker(const MatrixXd& x, const MatrixXd& y,
                            const KroneckerOptions& opts) {
  check_shapes(x, y);
  const Index q = y.rows(), n = x.rows();
  VectorXd p0(q * q + 2);
  MatrixXd a0 = (y * y.transpose()) / double(n);
  a0 *= 0.8;
  a0.diagonal().array() += 1e-6;
  const MatrixXd l0 = Llt(a0).matrixL();
  p0.head(q * q) = Eigen::Map<const VectorXd>(l0.data(), q * q);
  p0(q * q) = std::log(opts.initial_lengthscale);
  p0(q * q + 1) = std::log(opts.initial_noise);

  Objective obj = [&](const VectorXd& p, VectorXd& g) {
    VectorXd grad;
    const double v = kronecker_log_likelihood(x, y, p, &grad);
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    g = -grad;
    return -v;
  };
  LbfgsOptions lo;
  lo.max_iters = opts.max_iters;
  const LbfgsResult r = lbfgs_minimize(obj, p0, lo);

  const MatrixXd l = Eigen::Map<const MatrixXd>(r.x.data(), q, q);
  const MatrixXd a = l * l.transpose();
  const double ell = std::exp(r.x(q * q));
  const double noise = std::exp(r.x(q * q + 1));
  const MatrixXd signal = kronecker_kernel(a, se_kernel_matrix(x, ell, 1.0));
  MatrixXd k = signal;
  k.diagonal().array() += noise;
  const Factor f = robust_cholesky(k, 0.0, "Kronecker kernel");
  ExactGpResult out;
  out.fitted = unstack_outputs(signal * f.llt.solve(stack_outputs(y)), q);
  out.objective = -r.f;
  out.noise_variance = noise;
  out.coupling = a;
  out.lengthscale = ell;
  out.iterations = r.iterations;
  return out;
}

}  // namespace lcgp
