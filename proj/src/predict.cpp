#include "lcgp/predict.hpp"

#include <cmath>
#include <stdexcept>

namespace lcgp {

namespace {

// Index of the training row identical to x_star.row(r), or -1.
std::vector<Index> exact_matches(const MatrixXd& x, const MatrixXd& x_star) {
  std::vector<Index> out(x_star.rows(), -1);
  for (Index r = 0; r < x_star.rows(); ++r) {
    for (Index i = 0; i < x.rows(); ++i) {
      if (x.row(i) == x_star.row(r)) {
        out[r] = i;
        break;
      }
    }
  }
  return out;
}

// (K(x*, x) K^{-1} (x) I_Q) v for a prior with Cholesky factor `lower`.
MatrixXd conditional_mean(const MatrixXd& cross, const MatrixXd& lower,
                          const MatrixXd& v, Index q) {
  // weights = cross * (L L^T)^{-1}, computed with triangular solves.
  MatrixXd weights = cross.transpose();
  lower.triangularView<Eigen::Lower>().solveInPlace(weights);
  lower.triangularView<Eigen::Lower>().transpose().solveInPlace(weights);
  return kron_identity_apply(weights.transpose(), v, q);
}

void require_inputs(const MatrixXd& x_star) {
  if (x_star.rows() == 0) throw std::invalid_argument("prediction inputs are empty");
}

MatrixXd combine(const FittedModel& model, const MatrixXd& b_star,
                 const VectorXd& u_star) {
  const Index q = model.dims.Q, m = model.dims.M;
  const Index n_star = b_star.rows() / q;
  MatrixXd y(m, n_star);
  for (Index i = 0; i < n_star; ++i) {
    y.col(i) = b_star.middleRows(i * q, q).transpose() * u_star.segment(i * q, q);
  }
  return model.norm.invert(y);
}

}  // namespace

MatrixXd predict_z(const FittedModel& model, const MatrixXd& x_star) {
  require_inputs(x_star);
  const MatrixXd xs = model.to_internal_inputs(x_star);
  const double var = 1.0 / double(model.dims.nu);
  const MatrixXd cross = se_kernel_matrix(xs, model.x, model.hyper.lengthscale_z, var);
  MatrixXd z = conditional_mean(cross, model.kz_lower, model.state.z.z, model.dims.Q);
  const auto match = exact_matches(model.x, xs);
  const Index q = model.dims.Q;
  for (Index r = 0; r < xs.rows(); ++r) {
    if (match[r] >= 0) z.middleRows(r * q, q) = model.state.z.z.middleRows(match[r] * q, q);
  }
  return z;
}

MatrixXd predict_mixing(const FittedModel& model, const MatrixXd& x_star) {
  require_inputs(x_star);
  const MatrixXd xs = model.to_internal_inputs(x_star);
  const MatrixXd cross = se_kernel_matrix(xs, model.x, model.hyper.lengthscale_b, 1.0);
  MatrixXd b = conditional_mean(cross, model.kb_lower, model.state.mu_b, model.dims.Q);
  const auto match = exact_matches(model.x, xs);
  const Index q = model.dims.Q;
  for (Index r = 0; r < xs.rows(); ++r) {
    if (match[r] >= 0) b.middleRows(r * q, q) = model.state.mu_b.middleRows(match[r] * q, q);
  }
  return b;
}

LatentPrediction predict_latent(const FittedModel& model, const MatrixXd& x_star) {
  require_inputs(x_star);
  const Index q = model.dims.Q;
  const MatrixXd xs = model.to_internal_inputs(x_star);
  const MatrixXd z_star = predict_z(model, x_star);
  const double noise = 1.0 / model.state.omega_u;
  const auto match = exact_matches(model.x, xs);

  MatrixXd cross = (z_star * model.state.z.z.transpose())
                       .cwiseProduct(gibbs_block_matrix(xs, model.x, model.hyper.lengthscales));
  MatrixXd k_ss = hadamard_kernel(z_star, gibbs_block_matrix(xs, model.hyper.lengthscales));
  k_ss.diagonal().array() += noise;
  for (Index r = 0; r < xs.rows(); ++r) {
    if (match[r] < 0) continue;
    for (Index p = 0; p < q; ++p) cross(r * q + p, match[r] * q + p) += noise;
  }

  const Llt& llt = model.joint.chol.llt;
  const MatrixXd a = llt.solve(cross.transpose());  // K^{-1} C^T
  LatentPrediction out;
  out.mean = a.transpose() * model.state.mu_u;
  // K** - C K^{-1} (K - Sigma_u) K^{-1} C^T
  const MatrixXd k = with_jitter(model.joint.k, model.joint.chol);
  MatrixXd cov = k_ss - a.transpose() * (k - model.state.sigma_u) * a;
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

MatrixXd predict_outputs(const FittedModel& model, const MatrixXd& x_star,
                         Index sample) {
  if (sample < 0 || sample >= model.dims.S) {
    throw std::out_of_range("sample index " + std::to_string(sample) +
                            " outside [0, " + std::to_string(model.dims.S) + ")");
  }
  return predict_outputs(model, x_star, VectorXd(model.state.mu_u.col(sample)));
}

MatrixXd predict_outputs(const FittedModel& model, const MatrixXd& x_star,
                         const VectorXd& latent) {
  require_inputs(x_star);
  if (latent.size() != model.dims.nq()) {
    throw std::invalid_argument("latent mean has length " + std::to_string(latent.size()) +
                                ", expected " + std::to_string(model.dims.nq()));
  }
  const Index q = model.dims.Q;
  const MatrixXd xs = model.to_internal_inputs(x_star);
  const MatrixXd z_star = predict_z(model, x_star);
  const auto match = exact_matches(model.x, xs);
  MatrixXd cross = (z_star * model.state.z.z.transpose())
                       .cwiseProduct(gibbs_block_matrix(xs, model.x, model.hyper.lengthscales));
  for (Index r = 0; r < xs.rows(); ++r) {
    if (match[r] < 0) continue;
    for (Index p = 0; p < q; ++p) cross(r * q + p, match[r] * q + p) += 1.0 / model.state.omega_u;
  }
  VectorXd u_star = cross * model.joint.chol.llt.solve(latent);
  for (Index r = 0; r < xs.rows(); ++r) {
    if (match[r] >= 0) u_star.segment(r * q, q) = latent.segment(match[r] * q, q);
  }
  return combine(model, predict_mixing(model, x_star), u_star);
}

SamplePosterior new_sample_posterior(const FittedModel& model, const MatrixXd& y) {
  const Index n = model.dims.N, q = model.dims.Q, m = model.dims.M;
  if (y.rows() != m || y.cols() != n) {
    throw std::invalid_argument("new sample is " + std::to_string(y.rows()) + "x" +
                                std::to_string(y.cols()) + ", expected " +
                                std::to_string(m) + "x" + std::to_string(n));
  }
  const MatrixXd ys = model.norm.apply(y);
  const double omega_f = model.state.omega_f.mean();
  MatrixXd d = omega_f * expected_btb(model.state, model.dims);
  VectorXd rhs(model.dims.nq());
  for (Index i = 0; i < n; ++i) {
    rhs.segment(i * q, q) = omega_f * (model.state.mu_b.middleRows(i * q, q) * ys.col(i));
  }
  // Sigma = L (I + L^T D L)^{-1} L^T.
  const MatrixXd l = model.joint.chol.lower();
  MatrixXd inner = l.transpose() * d * l;
  inner = (0.5 * (inner + inner.transpose())).eval();
  inner.diagonal().array() += 1.0;
  Llt llt(inner);
  if (llt.info() != Eigen::Success) throw NumericError("new-sample posterior is not positive definite");
  MatrixXd x = l.transpose();
  llt.matrixL().solveInPlace(x);
  SamplePosterior out;
  out.cov = x.transpose() * x;
  out.cov = (0.5 * (out.cov + out.cov.transpose())).eval();
  out.mean = out.cov * rhs;
  return out;
}

double label_probability(const FittedModel& model, const SamplePosterior& post) {
  if (!model.state.classification) {
    throw std::logic_error("model was fitted without classification");
  }
  const Index nq = model.dims.nq();
  const VectorXd w = model.state.mu_wb.head(nq);
  const double b = model.state.mu_wb(nq);
  const double var = 1.0 + w.dot(post.cov * w);
  return normal_cdf((w.dot(post.mean) + b) / std::sqrt(var));
}

double predict_label(const FittedModel& model, const MatrixXd& y) {
  if (!model.state.classification) {
    throw std::logic_error("model was fitted without classification");
  }
  return label_probability(model, new_sample_posterior(model, y));
}

MatrixXd latent_covariance(const FittedModel& model, Index p, Index q) {
  const Index nq_sig = model.dims.Q, n = model.dims.N;
  if (p < 0 || q < 0 || p >= nq_sig || q >= nq_sig) {
    throw std::out_of_range("signal indices (" + std::to_string(p) + ", " +
                            std::to_string(q) + ") outside [0, " +
                            std::to_string(nq_sig) + ")");
  }
  const MatrixXd full = model.latent_kernel();
  MatrixXd out(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) out(i, j) = full(i * nq_sig + p, j * nq_sig + q);
  }
  return out;
}

}  // namespace lcgp
