#include "lcgp/zopt.hpp"

#include <cmath>
#include <limits>

namespace lcgp {

namespace {

double omega_log_prior(double omega_u, const GammaPrior& prior) {
  return (prior.shape - 1.0) * std::log(omega_u) - prior.rate * omega_u;
}

void check_context(const MatrixXd& z, const ZObjectiveContext& ctx) {
  const Index nq = ctx.k_q.rows();
  if (z.rows() != nq || ctx.second_moment.rows() != nq ||
      ctx.second_moment.cols() != nq || ctx.kz_lower.rows() * ctx.n_signals != nq) {
    throw std::invalid_argument("Z objective: inconsistent shapes");
  }
}

}  // namespace

MatrixXd whiten(const MatrixXd& z, const MatrixXd& kz_lower, Index q) {
  return kron_identity_solve_lower(kz_lower, z, q);
}

MatrixXd unwhiten(const MatrixXd& z_hat, const MatrixXd& kz_lower, Index q) {
  return kron_identity_apply(kz_lower.triangularView<Eigen::Lower>(), z_hat, q);
}

MatrixXd whiten_gradient(const MatrixXd& grad_z, const MatrixXd& kz_lower,
                         Index q) {
  return kron_identity_apply_transpose(
      kz_lower.triangularView<Eigen::Lower>(), grad_z, q);
}

ZEvaluation evaluate_z(const MatrixXd& z, double omega_u,
                       const ZObjectiveContext& ctx, bool with_gradient) {
  check_context(z, ctx);
  ZEvaluation out;
  MatrixXd k = hadamard_kernel(z, ctx.k_q);
  k.diagonal().array() += 1.0 / omega_u;
  Llt llt(k);
  if (llt.info() != Eigen::Success ||
      !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
    out.feasible = false;
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }
  const double s = static_cast<double>(ctx.n_samples);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const MatrixXd whitened_z = whiten(z, ctx.kz_lower, ctx.n_signals);
  const double prior_quad = whitened_z.squaredNorm();

  MatrixXd k_inv_s = llt.solve(ctx.second_moment);
  out.value = -0.5 * (s * log_det + k_inv_s.trace() + prior_quad);
  if (ctx.include_omega_prior) out.value += omega_log_prior(omega_u, ctx.omega_u_prior);
  if (!std::isfinite(out.value)) {
    out.feasible = false;
    out.value = -std::numeric_limits<double>::infinity();
    return out;
  }
  if (!with_gradient) return out;

  const MatrixXd k_inv = llt.solve(MatrixXd::Identity(k.rows(), k.cols()));
  // G = K^-1 S K^-1 - S K^-1, symmetrized against rounding.
  MatrixXd g = k_inv_s * k_inv;
  g = (0.5 * (g + g.transpose()) - s * k_inv).eval();
  const MatrixXd data_grad = g.cwiseProduct(ctx.k_q) * z;
  // The prior part is -Z_hat in whitened coordinates; mapping it back with
  // triangular solves avoids forming an explicit inverse.
  out.grad_z = data_grad - kron_identity_solve_lower_transpose(
                               ctx.kz_lower, whitened_z, ctx.n_signals);
  out.grad_z_hat = whiten_gradient(data_grad, ctx.kz_lower, ctx.n_signals) - whitened_z;
  out.grad_log_omega = -0.5 * g.trace() / omega_u;
  if (ctx.include_omega_prior) {
    out.grad_log_omega +=
        (ctx.omega_u_prior.shape - 1.0) - ctx.omega_u_prior.rate * omega_u;
  }
  return out;
}

double z_objective(const MatrixXd& z, double omega_u,
                   const ZObjectiveContext& ctx) {
  const ZEvaluation e = evaluate_z(z, omega_u, ctx, false);
  if (!e.feasible) throw NumericError("Z objective: joint kernel is not positive definite");
  return e.value;
}

MatrixXd z_gradient(const MatrixXd& z, double omega_u,
                    const ZObjectiveContext& ctx) {
  ZEvaluation e = evaluate_z(z, omega_u, ctx, true);
  if (!e.feasible) throw NumericError("Z gradient: joint kernel is not positive definite");
  return std::move(e.grad_z);
}

ZOptResult optimize_z(const MatrixXd& z0, double omega_u0,
                      const ZObjectiveContext& ctx, const ZOptOptions& opts) {
  const Index q = ctx.n_signals;
  const Index rows = z0.rows();
  const Index cols = z0.cols();
  const Index nz = rows * cols;

  auto unpack = [&](const VectorXd& v, MatrixXd& z, double& omega) {
    const MatrixXd z_hat = Eigen::Map<const MatrixXd>(v.data(), rows, cols);
    z = unwhiten(z_hat, ctx.kz_lower, q);
    omega = opts.optimize_omega ? std::exp(v(nz)) : omega_u0;
  };

  // Minimize the negated objective in whitened coordinates.
  Objective objective = [&](const VectorXd& v, VectorXd& grad) {
    MatrixXd z;
    double omega = 0.0;
    unpack(v, z, omega);
    if (!std::isfinite(omega) || omega <= 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    const ZEvaluation e = evaluate_z(z, omega, ctx, true);
    if (!e.feasible) return std::numeric_limits<double>::infinity();
    grad.head(nz) = -Eigen::Map<const VectorXd>(e.grad_z_hat.data(), nz);
    if (opts.optimize_omega) grad(nz) = -e.grad_log_omega;
    return -e.value;
  };

  VectorXd v0(nz + (opts.optimize_omega ? 1 : 0));
  const MatrixXd z_hat0 = whiten(z0, ctx.kz_lower, q);
  v0.head(nz) = Eigen::Map<const VectorXd>(z_hat0.data(), nz);
  if (opts.optimize_omega) v0(nz) = std::log(omega_u0);

  ZOptResult res;
  const ZEvaluation start = evaluate_z(z0, omega_u0, ctx, false);
  if (!start.feasible) throw NumericError("optimize_z: infeasible starting point");
  res.objective_before = start.value;

  LbfgsOptions lopts;
  lopts.max_iters = opts.max_iters;
  lopts.grad_tol = 1e-9;
  const LbfgsResult lr = lbfgs_minimize(objective, v0, lopts);
  res.iterations = lr.iterations;
  res.warning = lr.line_search_failed;
  if (-lr.f >= res.objective_before) {
    unpack(lr.x, res.z, res.omega_u);
    res.objective_after = -lr.f;
  } else {
    res.z = z0;
    res.omega_u = omega_u0;
    res.objective_after = res.objective_before;
    res.warning = true;
  }
  return res;
}

std::vector<double> optimize_lengthscales(
    const MatrixXd& z, double omega_u, const MatrixXd& x,
    const std::vector<double>& lengthscales, ZObjectiveContext ctx,
    const LengthscaleSearch& search) {
  if (!search.enabled) return lengthscales;
  std::vector<double> best = lengthscales;
  auto score = [&](const std::vector<double>& ls) {
    ctx.k_q = gibbs_block_matrix(x, ls);
    const ZEvaluation e = evaluate_z(z, omega_u, ctx, false);
    return e.feasible ? e.value : -std::numeric_limits<double>::infinity();
  };
  double best_value = score(best);
  const double golden = 0.5 * (std::sqrt(5.0) - 1.0);

  for (std::size_t p = 0; p < best.size(); ++p) {
    std::vector<double> trial = best;
    auto at = [&](double log_l) {
      trial[p] = std::exp(log_l);
      return score(trial);
    };
    double a = std::log(search.lower), b = std::log(search.upper);
    double c = b - golden * (b - a), d = a + golden * (b - a);
    double fc = at(c), fd = at(d);
    double cand = fc >= fd ? c : d, cand_value = std::max(fc, fd);
    for (int it = 0; it < search.iterations; ++it) {
      if (fc >= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - golden * (b - a);
        fc = at(c);
        if (fc > cand_value) cand = c, cand_value = fc;
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + golden * (b - a);
        fd = at(d);
        if (fd > cand_value) cand = d, cand_value = fd;
      }
    }
    if (cand_value > best_value) {
      best[p] = std::exp(cand);
      best_value = cand_value;
    }
  }
  return best;
}

}  // namespace lcgp
