#include "lcgp/synth.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "lcgp/kernels.hpp"
#include "lcgp/linalg.hpp"

namespace lcgp {

namespace {

using Rng = std::mt19937_64;

MatrixXd gaussian_matrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd out(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) out(r, c) = normal(rng);
  }
  return out;
}

VectorXd linspace(Index n, double lo, double hi) {
  if (n == 1) return VectorXd::Constant(1, lo);
  return VectorXd::LinSpaced(n, lo, hi);
}

MatrixXd sqrt_factor(const MatrixXd& c, const char* what) {
  return robust_cholesky(c, 1e-10, what).lower();
}

void check_correlation(const MatrixXd& c, const std::string& what) {
  if (c.rows() != c.cols()) throw std::invalid_argument(what + " is not square");
  if (max_asymmetry(c) > 1e-12) throw std::invalid_argument(what + " is not symmetric");
  if ((c.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12) {
    throw std::invalid_argument(what + " does not have a unit diagonal");
  }
  if (min_eigenvalue(c) < -1e-10) throw std::invalid_argument(what + " is not PSD");
}

// Uncentered Gram-Schmidt of the rows of g over the columns in [lo, hi),
// each row rescaled to norm `target`.
void orthonormalize(MatrixXd& g, Index lo, Index hi, double target, bool keep_first) {
  const Index len = hi - lo;
  if (len <= 0) return;
  for (Index r = 0; r < g.rows(); ++r) {
    auto row = g.row(r).segment(lo, len);
    if (!(keep_first && r == 0)) {
      for (Index k = 0; k < r; ++k) {
        const auto prev = g.row(k).segment(lo, len);
        row -= (row.dot(prev) / prev.squaredNorm()) * prev;
      }
    }
    const double norm = row.norm();
    if (norm > 0.0 && !(keep_first && r == 0)) row *= target / norm;
  }
}

}  // namespace

SwitchSpec SwitchSpec::resolved() const {
  SwitchSpec out = *this;
  if (out.c_pre.size() == 0) {
    out.c_pre = MatrixXd::Constant(3, 3, 0.9);
    out.c_pre.diagonal().setOnes();
  }
  if (out.c_post.size() == 0) {
    VectorXd d = VectorXd::Ones(3);
    d(1) = -1.0;
    out.c_post = d.asDiagonal() * out.c_pre * d.asDiagonal();
  }
  return out;
}

void SwitchSpec::validate() const {
  if (n < 2) throw std::invalid_argument("switch data needs at least 2 points");
  if (!(noise_sd >= 0.0) || !(amplitude > 0.0) || !(base_lengthscale > 0.0)) {
    throw std::invalid_argument("switch spec: scales must be positive");
  }
  const SwitchSpec r = resolved();
  check_correlation(r.c_pre, "c_pre");
  check_correlation(r.c_post, "c_post");
  if (r.c_pre.rows() != r.c_post.rows()) {
    throw std::invalid_argument("c_pre and c_post differ in size");
  }
}

SwitchData gen_switch(const SwitchSpec& spec_in) {
  spec_in.validate();
  const SwitchSpec spec = spec_in.resolved();
  const Index m = spec.c_pre.rows(), n = spec.n;
  Rng rng(spec.seed);
  const VectorXd xs = linspace(n, -1.0, 1.0);
  const MatrixXd x = xs;
  const MatrixXd k = se_kernel_matrix(x, spec.base_lengthscale, 1.0);
  const MatrixXd lk = robust_cholesky(k, 1e-8, "switch base kernel").lower();
  MatrixXd g = (lk * gaussian_matrix(n, m, rng)).transpose();  // m x n

  g.row(0) /= std::sqrt(g.row(0).squaredNorm() / double(n));
  const Index split = std::find_if(xs.data(), xs.data() + n,
                                   [&](double v) { return v >= spec.switch_at; }) - xs.data();
  for (auto [lo, hi] : {std::pair<Index, Index>{0, split}, {split, n}}) {
    if (hi <= lo) continue;
    const double target = g.row(0).segment(lo, hi - lo).norm();
    orthonormalize(g, lo, hi, target, true);
  }

  const MatrixXd l_pre = sqrt_factor(spec.c_pre, "c_pre");
  const MatrixXd l_post = sqrt_factor(spec.c_post, "c_post");
  SwitchData out;
  out.truth.resize(m, n);
  for (Index i = 0; i < n; ++i) {
    const MatrixXd& l = i < split ? l_pre : l_post;
    out.truth.col(i) = spec.amplitude * (l * g.col(i));
  }
  out.data.x = x;
  out.data.y = {out.truth + spec.noise_sd * gaussian_matrix(m, n, rng)};
  for (Index c = 0; c < m; ++c) out.data.channel_names.push_back("y" + std::to_string(c + 1));
  return out;
}

void ToySpec::validate() const {
  if (q < 1 || s < 1 || n < 1) throw std::invalid_argument("toy spec: sizes must be positive");
  if (!(noise_sd >= 0.0) || !(lengthscale > 0.0)) {
    throw std::invalid_argument("toy spec: scales must be positive");
  }
  if (sigma_true.size() != 0) {
    if (sigma_true.rows() != q) throw std::invalid_argument("sigma_true must be Q x Q");
    check_correlation(sigma_true, "sigma_true");
  }
}

MatrixXd random_correlation(Index q, Index dof, std::uint64_t seed) {
  Rng rng(seed);
  const MatrixXd g = gaussian_matrix(q, std::max(dof, q), rng);
  MatrixXd w = g * g.transpose();
  const VectorXd d = w.diagonal().cwiseSqrt().cwiseInverse();
  w = d.asDiagonal() * w * d.asDiagonal();
  w.diagonal().setOnes();
  return 0.5 * (w + w.transpose());
}

ToyData gen_toy(const ToySpec& spec) {
  spec.validate();
  const Index q = spec.q, n = spec.n;
  ToyData out;
  out.sigma_true = spec.sigma_true.size() ? spec.sigma_true
                                          : random_correlation(q, q, spec.seed ^ 0x9e3779b97f4a7c15ULL);
  out.mixing = MatrixXd::Identity(q, q);
  const MatrixXd x = linspace(n, -1.0, 1.0);
  const MatrixXd k = se_kernel_matrix(x, spec.lengthscale, 1.0);
  out.latent_cov = kronecker_kernel(out.sigma_true, k);

  Rng rng(spec.seed);
  const MatrixXd lk = robust_cholesky(k, 1e-8, "toy input kernel").lower();
  const MatrixXd ls = sqrt_factor(out.sigma_true, "sigma_true");
  out.data.x = x;
  for (Index s = 0; s < spec.s; ++s) {
    // u = vec((L_k E L_s^T)^T): input-major draw from K (x) Sigma.
    const MatrixXd u = (lk * gaussian_matrix(n, q, rng) * ls.transpose()).transpose();
    out.data.y.push_back(out.mixing * u + spec.noise_sd * gaussian_matrix(q, n, rng));
  }
  for (Index c = 0; c < q; ++c) out.data.channel_names.push_back("y" + std::to_string(c + 1));
  return out;
}

Dataset gen_mixture(const MixtureSpec& spec) {
  if (spec.n < 2 || spec.m < 1 || spec.s < 1 || spec.q < 1) {
    throw std::invalid_argument("mixture spec: sizes must be positive");
  }
  const Index n = spec.n, q = spec.q, m = spec.m;
  std::vector<double> ls = spec.lengthscales;
  if (ls.empty()) {
    for (Index p = 0; p < q; ++p) {
      ls.push_back(q == 1 ? 0.3 : 0.15 * std::pow(4.0, double(p) / double(q - 1)));
    }
  }
  if (Index(ls.size()) != q) throw std::invalid_argument("mixture spec: one lengthscale per signal");
  Rng rng(spec.seed);
  const MatrixXd x = linspace(n, -1.0, 1.0);
  const MatrixXd kz_lower =
      robust_cholesky(wishart_prior_kernel(x, spec.lengthscale_z, q), 1e-8, "Wishart prior").lower();
  const MatrixXd z = kron_identity_apply(kz_lower, gaussian_matrix(n * q, q, rng), q);
  MatrixXd k = hadamard_kernel(z, gibbs_block_matrix(x, ls));
  k.diagonal().array() += 1e-2;
  const MatrixXd lk = robust_cholesky(k, 0.0, "mixture latent kernel").lower();
  const MatrixXd lb =
      robust_cholesky(se_kernel_matrix(x, spec.lengthscale_b, 1.0), 1e-8, "mixing prior").lower();
  const MatrixXd b = kron_identity_apply(lb, gaussian_matrix(n * q, m, rng), q);  // NQ x M

  Dataset out;
  out.x = x;
  for (Index s = 0; s < spec.s; ++s) {
    const VectorXd u = lk * gaussian_matrix(n * q, 1, rng);
    MatrixXd y(m, n);
    for (Index i = 0; i < n; ++i) {
      y.col(i) = b.middleRows(i * q, q).transpose() * u.segment(i * q, q);
    }
    out.y.push_back(y + spec.noise_sd * gaussian_matrix(m, n, rng));
  }
  for (Index c = 0; c < m; ++c) out.channel_names.push_back("ch" + std::to_string(c + 1));
  return out;
}

Dataset resample_from_model(const FittedModel& model, std::uint64_t seed,
                            Index n_samples) {
  if (model.state.mu_u.size() == 0 || model.joint.k.size() == 0) {
    throw std::invalid_argument("resample_from_model: model is not fitted");
  }
  const Index n = model.dims.N, q = model.dims.Q, m = model.dims.M;
  const Index s_count = n_samples > 0 ? n_samples : model.dims.S;
  Rng rng(seed);
  const MatrixXd lk = model.joint.chol.lower();
  const double noise_sd = 1.0 / std::sqrt(model.state.omega_f.mean());

  Dataset out;
  out.x = model.x;
  if (model.input_map) {
    out.x = (model.x.array().rowwise() * model.input_map->scale.transpose().array())
                .rowwise() +
            model.input_map->offset.transpose().array();
  }
  VectorXd labels(s_count);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index s = 0; s < s_count; ++s) {
    const VectorXd u = lk * gaussian_matrix(n * q, 1, rng);
    MatrixXd y(m, n);
    for (Index i = 0; i < n; ++i) {
      y.col(i) = model.state.mu_b.middleRows(i * q, q).transpose() * u.segment(i * q, q);
    }
    y += noise_sd * gaussian_matrix(m, n, rng);
    out.y.push_back(model.norm.invert(y));
    if (model.state.classification) {
      const Index nq = model.dims.nq();
      const double h = model.state.mu_wb.head(nq).dot(u) + model.state.mu_wb(nq) + normal(rng);
      labels(s) = h > 0.0 ? 1.0 : -1.0;
    }
  }
  if (model.state.classification) out.labels = labels;
  for (Index c = 0; c < m; ++c) out.channel_names.push_back("ch" + std::to_string(c + 1));
  return out;
}

MatrixXd permute_signals(const MatrixXd& c, const std::vector<Index>& perm) {
  const Index q = static_cast<Index>(perm.size());
  if (q == 0 || c.rows() % q != 0 || c.rows() != c.cols()) {
    throw std::invalid_argument("permute_signals: shape mismatch");
  }
  const Index n = c.rows() / q;
  std::vector<Index> idx(c.rows());
  for (Index i = 0; i < n; ++i) {
    for (Index p = 0; p < q; ++p) idx[i * q + p] = i * q + perm[p];
  }
  return c(idx, idx);
}

RecoveryScore recovery_score(const MatrixXd& c_true, const MatrixXd& c_est, Index q) {
  if (c_true.rows() != c_est.rows() || c_true.cols() != c_est.cols() ||
      c_true.rows() != c_true.cols() || q < 1 || c_true.rows() % q != 0) {
    throw std::invalid_argument("recovery_score: matrices are not conformable");
  }
  if (q > 6) throw std::invalid_argument("recovery_score: Q > 6 is not supported");
  const Index d = c_true.rows();
  const Index len = d * (d + 1) / 2;
  auto upper = [&](const MatrixXd& c) {
    VectorXd v(len);
    Index k = 0;
    for (Index j = 0; j < d; ++j) {
      for (Index i = 0; i <= j; ++i) v(k++) = c(i, j);
    }
    return v;
  };
  auto centered = [](VectorXd v) {
    v.array() -= v.mean();
    return v;
  };
  const VectorXd a = centered(upper(c_true));
  if (a.norm() == 0.0) throw std::invalid_argument("recovery_score: true covariance is constant");

  std::vector<Index> perm(q);
  std::iota(perm.begin(), perm.end(), Index(0));
  RecoveryScore best;
  best.score = -std::numeric_limits<double>::infinity();
  do {
    const VectorXd b = centered(upper(permute_signals(c_est, perm)));
    if (b.norm() == 0.0) throw std::invalid_argument("recovery_score: estimate is constant");
    const double r = a.dot(b) / (a.norm() * b.norm());
    if (r > best.score) {
      best.score = r;
      best.permutation = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

ErrorMetrics metrics(const MatrixXd& pred, const MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw std::invalid_argument("metrics: prediction is " + std::to_string(pred.rows()) + "x" +
                                std::to_string(pred.cols()) + " but truth is " +
                                std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
  }
  if (pred.size() == 0) throw std::invalid_argument("metrics: empty input");
  const auto diff = (pred - truth).array();
  return {diff.abs().mean(), diff.square().mean()};
}

double auc(const VectorXd& scores, const VectorXd& labels) {
  if (scores.size() != labels.size() || scores.size() == 0) {
    throw std::invalid_argument("auc: scores and labels must be nonempty and equal length");
  }
  const Index n = scores.size();
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index(0));
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) < scores(b); });
  VectorXd ranks(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && scores(order[j + 1]) == scores(order[i])) ++j;
    const double mid = 0.5 * double(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) ranks(order[k]) = mid;
    i = j + 1;
  }
  double n_pos = 0.0, rank_sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (labels(i) > 0.0) {
      n_pos += 1.0;
      rank_sum += ranks(i);
    }
  }
  const double n_neg = double(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw std::invalid_argument("auc: only one class present");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double fisher_statistic(const std::vector<double>& pvals) {
  if (pvals.empty()) throw std::invalid_argument("fisher: no p-values");
  double stat = 0.0;
  for (double p : pvals) {
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("fisher: p-values must lie in (0, 1]");
    stat -= 2.0 * std::log(p);
  }
  return stat;
}

double fisher_combine(const std::vector<double>& pvals) {
  const double stat = fisher_statistic(pvals);
  const boost::math::chi_squared dist(2.0 * double(pvals.size()));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

std::vector<double> null_scores(const MatrixXd& c_true, const MatrixXd& k_q,
                                const MatrixXd& kz_lower, Index q, Index nu,
                                int n_draws, std::uint64_t seed) {
  if (n_draws < 100) throw std::invalid_argument("null_scores: need at least 100 draws");
  Rng rng(seed);
  const Index nq = k_q.rows();
  std::vector<double> out;
  out.reserve(n_draws);
  for (int d = 0; d < n_draws; ++d) {
    const MatrixXd z = kron_identity_apply(kz_lower, gaussian_matrix(nq, nu, rng), q);
    out.push_back(recovery_score(c_true, hadamard_kernel(z, k_q), q).score);
  }
  return out;
}

double empirical_pvalue(double observed, const std::vector<double>& null) {
  const auto exceed = std::count_if(null.begin(), null.end(),
                                    [&](double v) { return v >= observed; });
  return (1.0 + double(exceed)) / (double(null.size()) + 1.0);
}

double empirical_pvalue(double observed, const MatrixXd& c_true,
                        const FittedModel& model, int n_draws, std::uint64_t seed) {
  return empirical_pvalue(observed, null_scores(c_true, model.k_q, model.kz_lower, model.dims.Q,
                                                model.dims.nu, n_draws, seed));
}

}  // namespace lcgp
