#include "lcgp/kernels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lcgp {

namespace {

void check_lengthscales(const std::vector<double>& ls) {
  if (ls.empty()) throw std::invalid_argument("no lengthscales given");
  for (double l : ls) {
    if (!(l > 0.0)) {
      throw std::invalid_argument("lengthscale must be positive, got " +
                                  std::to_string(l));
    }
  }
}

// (NQ) x c  <->  N x (Q c) with column p * c + col holding signal p.
MatrixXd signals_to_columns(const MatrixXd& v, Index q) {
  const Index n = v.rows() / q;
  const Index c = v.cols();
  MatrixXd out(n, q * c);
  for (Index col = 0; col < c; ++col) {
    for (Index i = 0; i < n; ++i) {
      for (Index p = 0; p < q; ++p) out(i, p * c + col) = v(i * q + p, col);
    }
  }
  return out;
}

MatrixXd columns_to_signals(const MatrixXd& w, Index q, Index c) {
  const Index n = w.rows();
  MatrixXd out(n * q, c);
  for (Index col = 0; col < c; ++col) {
    for (Index i = 0; i < n; ++i) {
      for (Index p = 0; p < q; ++p) out(i * q + p, col) = w(i, p * c + col);
    }
  }
  return out;
}

}  // namespace

double squared_distance(const MatrixXd& a, Index i, const MatrixXd& b,
                        Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

double gibbs(double sq_dist, double lp, double lq, Index input_dim) {
  if (!(lp > 0.0) || !(lq > 0.0)) {
    throw std::invalid_argument("gibbs: lengthscales must be positive");
  }
  const double sum_sq = lp * lp + lq * lq;
  return std::pow(2.0 * lp * lq / sum_sq, 0.5 * double(input_dim)) * std::exp(-sq_dist / sum_sq);
}

double gibbs(double x, double x2, double lp, double lq) {
  return gibbs((x - x2) * (x - x2), lp, lq);
}

MatrixXd prefactor_matrix(const std::vector<double>& lengthscales, Index input_dim) {
  check_lengthscales(lengthscales);
  const Index q = static_cast<Index>(lengthscales.size());
  MatrixXd p(q, q);
  for (Index a = 0; a < q; ++a) {
    for (Index b = 0; b < q; ++b) {
      const double la = lengthscales[a], lb = lengthscales[b];
      p(a, b) = a == b ? 1.0 : std::pow(2.0 * la * lb / (la * la + lb * lb), 0.5 * double(input_dim));
    }
  }
  return p;
}

MatrixXd gibbs_block_matrix(const MatrixXd& x1, const MatrixXd& x2,
                            const std::vector<double>& lengthscales) {
  check_lengthscales(lengthscales);
  if (x1.cols() != x2.cols()) {
    throw std::invalid_argument("gibbs_block_matrix: input dimension mismatch");
  }
  const Index q = static_cast<Index>(lengthscales.size());
  const MatrixXd pre = prefactor_matrix(lengthscales, x1.cols());
  MatrixXd inv_sum(q, q);
  for (Index a = 0; a < q; ++a) {
    for (Index b = 0; b < q; ++b) {
      inv_sum(a, b) = 1.0 / (lengthscales[a] * lengthscales[a] +
                             lengthscales[b] * lengthscales[b]);
    }
  }
  MatrixXd k(x1.rows() * q, x2.rows() * q);
  for (Index j = 0; j < x2.rows(); ++j) {
    for (Index i = 0; i < x1.rows(); ++i) {
      const double d2 = squared_distance(x1, i, x2, j);
      for (Index b = 0; b < q; ++b) {
        for (Index a = 0; a < q; ++a) {
          k(i * q + a, j * q + b) = pre(a, b) * std::exp(-d2 * inv_sum(a, b));
        }
      }
    }
  }
  return k;
}

MatrixXd gibbs_block_matrix(const MatrixXd& x,
                            const std::vector<double>& lengthscales) {
  if (x.rows() < 1) throw std::invalid_argument("gibbs_block_matrix: N < 1");
  MatrixXd k = gibbs_block_matrix(x, x, lengthscales);
  // Exact symmetry regardless of exp rounding order.
  return 0.5 * (k + k.transpose());
}

MatrixXd se_kernel_matrix(const MatrixXd& x1, const MatrixXd& x2,
                          double lengthscale, double variance) {
  if (!(lengthscale > 0.0) || !(variance > 0.0)) {
    throw std::invalid_argument(
        "se_kernel_matrix: lengthscale and variance must be positive");
  }
  const double inv = 1.0 / (2.0 * lengthscale * lengthscale);
  MatrixXd k(x1.rows(), x2.rows());
  for (Index j = 0; j < x2.rows(); ++j) {
    for (Index i = 0; i < x1.rows(); ++i) {
      k(i, j) = variance * std::exp(-squared_distance(x1, i, x2, j) * inv);
    }
  }
  return k;
}

MatrixXd se_kernel_matrix(const MatrixXd& x, double lengthscale,
                          double variance) {
  return se_kernel_matrix(x, x, lengthscale, variance);
}

MatrixXd wishart_block(const WishartFactor& f, Index i, Index j) {
  const Index n = f.n_inputs();
  if (i < 0 || i >= n || j < 0 || j >= n) {
    throw std::out_of_range("wishart_block: input index out of range");
  }
  return f.slab(i) * f.slab(j).transpose();
}

MatrixXd wishart_prior_kernel(const MatrixXd& x, double lengthscale_z,
                              Index nu) {
  return se_kernel_matrix(x, lengthscale_z, 1.0 / static_cast<double>(nu));
}

WishartFactor identity_factor(Index n, Index q, Index nu) {
  WishartFactor f;
  f.n_signals = q;
  f.z = MatrixXd::Zero(n * q, nu);
  for (Index i = 0; i < n; ++i) {
    for (Index p = 0; p < std::min(q, nu); ++p) f.z(i * q + p, p) = 1.0;
  }
  return f;
}

MatrixXd hadamard_kernel(const MatrixXd& z, const MatrixXd& k_q) {
  if (z.rows() != k_q.rows() || k_q.rows() != k_q.cols()) {
    throw std::invalid_argument("hadamard_kernel: shape mismatch");
  }
  MatrixXd a = z * z.transpose();
  return a.cwiseProduct(k_q);
}

JointKernel joint_kernel(const WishartFactor& f, const MatrixXd& k_q,
                         double omega_u) {
  if (!(omega_u > 0.0) || !std::isfinite(omega_u)) {
    throw std::invalid_argument("joint_kernel: omega_u must be positive");
  }
  JointKernel jk;
  jk.omega_u = omega_u;
  jk.k = hadamard_kernel(f.z, k_q);
  jk.k.diagonal().array() += 1.0 / omega_u;
  jk.chol = robust_cholesky(jk.k, 0.0, "joint kernel");
  return jk;
}

MatrixXd kronecker_kernel(const MatrixXd& a, const MatrixXd& k) {
  if (a.rows() != a.cols() || k.rows() != k.cols()) {
    throw std::invalid_argument("kronecker_kernel: factors must be square");
  }
  const Index q = a.rows();
  const Index n = k.rows();
  MatrixXd out(n * q, n * q);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      out.block(i * q, j * q, q, q) = k(i, j) * a;
    }
  }
  return out;
}

MatrixXd kron_identity_apply(const MatrixXd& l, const MatrixXd& v, Index q) {
  if (v.rows() != l.cols() * q) {
    throw std::invalid_argument("kron_identity_apply: shape mismatch");
  }
  return columns_to_signals(l * signals_to_columns(v, q), q, v.cols());
}

MatrixXd kron_identity_apply_transpose(const MatrixXd& l, const MatrixXd& v,
                                       Index q) {
  if (v.rows() != l.rows() * q) {
    throw std::invalid_argument("kron_identity_apply_transpose: shape mismatch");
  }
  return columns_to_signals(l.transpose() * signals_to_columns(v, q), q,
                            v.cols());
}

MatrixXd kron_identity_solve_lower(const MatrixXd& l, const MatrixXd& v,
                                   Index q) {
  if (v.rows() != l.rows() * q) {
    throw std::invalid_argument("kron_identity_solve_lower: shape mismatch");
  }
  MatrixXd cols = signals_to_columns(v, q);
  l.triangularView<Eigen::Lower>().solveInPlace(cols);
  return columns_to_signals(cols, q, v.cols());
}

MatrixXd kron_identity_solve_lower_transpose(const MatrixXd& l, const MatrixXd& v,
                                             Index q) {
  if (v.rows() != l.rows() * q) {
    throw std::invalid_argument("kron_identity_solve_lower_transpose: shape mismatch");
  }
  MatrixXd cols = signals_to_columns(v, q);
  l.triangularView<Eigen::Lower>().transpose().solveInPlace(cols);
  return columns_to_signals(cols, q, v.cols());
}

}  // namespace lcgp
