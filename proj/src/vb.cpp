#include "lcgp/vb.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include <boost/math/special_functions/digamma.hpp>

#include "lcgp/model.hpp"

namespace lcgp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Location g whose positive truncation has mean `target` > 0.
double location_for_mean(double target) {
  double lo = -50.0, hi = target;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (tn_moments(mid, 1.0).mean < target) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

// X^T X where X = L_M^{-1} L^T and M = I + L^T D L. Returns log|M| too.
MatrixXd posterior_covariance(const MatrixXd& prior_lower, const MatrixXd& d,
                              double& log_det_m, const char* what) {
  const Index n = prior_lower.rows();
  MatrixXd m = prior_lower.transpose() * (d * prior_lower);
  m = (0.5 * (m + m.transpose())).eval();
  m.diagonal().array() += 1.0;
  Llt llt(m);
  if (llt.info() != Eigen::Success) {
    throw NumericError(std::string(what) + ": precision is not positive definite");
  }
  log_det_m = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  MatrixXd x = prior_lower.transpose();
  llt.matrixL().solveInPlace(x);
  MatrixXd cov = x.transpose() * x;
  (void)n;
  return 0.5 * (cov + cov.transpose());
}

MatrixXd kron_identity_dense(const MatrixXd& l, Index q) {
  const Index n = l.rows();
  MatrixXd out = MatrixXd::Zero(n * q, n * q);
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      if (l(i, j) == 0.0) continue;
      for (Index p = 0; p < q; ++p) out(i * q + p, j * q + p) = l(i, j);
    }
  }
  return out;
}

// tr((L (x) I)^{-1} A (L (x) I)^{-T}) for symmetric A.
double whitened_trace(const MatrixXd& l, const MatrixXd& a, Index q) {
  const MatrixXd left = kron_identity_solve_lower(l, a, q);
  const MatrixXd both = kron_identity_solve_lower(l, left.transpose(), q);
  return both.trace();
}

}  // namespace

double GammaPosterior::mean_log() const {
  return boost::math::digamma(shape) - std::log(rate);
}

double GammaPosterior::entropy() const {
  return shape - std::log(rate) + std::lgamma(shape) +
         (1.0 - shape) * boost::math::digamma(shape);
}

double GammaPosterior::expected_log_prior(const GammaPrior& prior) const {
  return prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) +
         (prior.shape - 1.0) * mean_log() - prior.rate * mean();
}

TruncatedMoments tn_moments(double g, double r) {
  if (r != 1.0 && r != -1.0) {
    throw std::invalid_argument("tn_moments: label must be -1 or +1");
  }
  const double t = r * g;
  const double lambda = inverse_mills(t);
  TruncatedMoments m;
  m.mean = g + r * lambda;
  double var = 1.0 - t * lambda - lambda * lambda;
  if (!(var > 0.0)) var = 1.0 / (t * t);
  m.variance = var;
  m.second = var + m.mean * m.mean;
  return m;
}

double ElboTerms::total() const {
  double sum = 0.0;
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError("ELBO term '" + name + "' is not finite");
    }
    sum += value;
  }
  return sum;
}

MatrixXd prior_lower(const MatrixXd& k, double jitter, const char* what,
                     double* log_det) {
  Factor f = robust_cholesky(k, jitter, what);
  if (log_det) *log_det = f.log_det();
  return f.lower();
}

VbEngine::VbEngine(const Dataset& data, const HyperParams& hyper,
                   const FitConfig& cfg)
    : data_(data), hyper_(hyper.with_signals(cfg.q)), cfg_(cfg) {
  data_.validate();
  dims_.N = data_.n_inputs();
  dims_.M = data_.n_channels();
  dims_.Q = cfg.q;
  dims_.S = data_.n_samples();
  dims_.nu = cfg.nu > 0 ? cfg.nu : cfg.q;
  dims_.validate();
  hyper_.validate(dims_.Q);
  if (cfg.classification && !data_.labels) {
    throw std::invalid_argument("classification requested but no labels given");
  }

  k_q_ = gibbs_block_matrix(data_.x, hyper_.lengthscales);
  kb_lower_ = prior_lower(se_kernel_matrix(data_.x, hyper_.lengthscale_b, 1.0),
                          hyper_.jitter, "mixing prior kernel", &log_det_kb_);
  kz_lower_ = prior_lower(
      wishart_prior_kernel(data_.x, hyper_.lengthscale_z, dims_.nu),
      hyper_.jitter, "Wishart prior kernel", &log_det_kz_);
  state_.classification = cfg.classification;
  state_.lengthscales = hyper_.lengthscales;
}

void VbEngine::refresh_joint() {
  joint_ = joint_kernel(state_.z, k_q_, state_.omega_u);
}

void VbEngine::initialize() {
  const Index nq = dims_.nq();
  const Index n = dims_.N, q = dims_.Q, m = dims_.M, s = dims_.S;
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Identity slabs plus a small perturbation drawn in whitened coordinates,
  // so the perturbation is as smooth as the prior.
  state_.z = identity_factor(n, q, dims_.nu);
  MatrixXd noise(state_.z.z.rows(), state_.z.z.cols());
  for (Index c = 0; c < noise.cols(); ++c) {
    for (Index r = 0; r < noise.rows(); ++r) noise(r, c) = 0.01 * normal(rng);
  }
  state_.z.z += kron_identity_apply(kz_lower_, noise, q);
  state_.omega_u = 10.0;
  refresh_joint();

  MatrixXd mix(nq, m);
  for (Index c = 0; c < m; ++c) {
    for (Index r = 0; r < nq; ++r) mix(r, c) = 0.1 * normal(rng);
  }
  state_.mu_b = kron_identity_apply(kb_lower_, mix, q);
  const MatrixXd lb = kron_identity_dense(kb_lower_, q);
  state_.sigma_b = 0.01 * (lb * lb.transpose());
  state_.log_det_sigma_b = nq * std::log(0.01) + q * log_det_kb_;

  state_.omega_f.shape = hyper_.omega_f.shape + 0.5 * double(n * m * s);
  state_.omega_f.rate = state_.omega_f.shape / 10.0;

  // Ridge least squares per input against the initial mixing means.
  state_.mu_u.resize(nq, s);
  for (Index i = 0; i < n; ++i) {
    MatrixXd bi(m, q);
    for (Index c = 0; c < m; ++c) bi.row(c) = state_.mu_b.col(c).segment(i * q, q).transpose();
    MatrixXd normal_eq = bi.transpose() * bi;
    normal_eq.diagonal().array() += 1.0;
    const Eigen::LDLT<MatrixXd> solver(normal_eq);
    for (Index smp = 0; smp < s; ++smp) {
      state_.mu_u.col(smp).segment(i * q, q) =
          solver.solve(bi.transpose() * data_.y[smp].col(i));
    }
  }
  state_.sigma_u = joint_.k;
  state_.log_det_sigma_u = joint_.chol.log_det();

  if (cfg_.classification) {
    state_.mu_wb = VectorXd::Zero(nq + 1);
    state_.sigma_wb = 0.01 * MatrixXd::Identity(nq + 1, nq + 1);
    state_.log_det_sigma_wb = double(nq + 1) * std::log(0.01);
    state_.lambda_w.shape = hyper_.lambda_w.shape + 0.5 * double(nq);
    state_.lambda_w.rate = state_.lambda_w.shape;
    state_.lambda_b.shape = hyper_.lambda_b.shape + 0.5;
    state_.lambda_b.rate = state_.lambda_b.shape;
    const VectorXd& r = *data_.labels;
    const double g1 = location_for_mean(1.0);
    state_.h_location.resize(s);
    state_.h_mean.resize(s);
    state_.h_second.resize(s);
    for (Index smp = 0; smp < s; ++smp) {
      state_.h_location(smp) = r(smp) * g1;
      const TruncatedMoments tm = tn_moments(state_.h_location(smp), r(smp));
      state_.h_mean(smp) = tm.mean;
      state_.h_second(smp) = tm.second;
    }
  }
}

MatrixXd expected_btb(const VariationalState& state, const Dims& dims) {
  const Index n = dims.N, q = dims.Q, m = dims.M;
  MatrixXd btb = MatrixXd::Zero(dims.nq(), dims.nq());
  for (Index i = 0; i < n; ++i) {
    const auto mu_i = state.mu_b.middleRows(i * q, q);  // Q x M
    btb.block(i * q, i * q, q, q) =
        mu_i * mu_i.transpose() +
        double(m) * state.sigma_b.block(i * q, i * q, q, q);
  }
  return btb;
}

MatrixXd VbEngine::expected_btb() const { return lcgp::expected_btb(state_, dims_); }

MatrixXd VbEngine::expected_bt_y() const {
  const Index n = dims_.N, q = dims_.Q;
  MatrixXd out(dims_.nq(), dims_.S);
  for (Index s = 0; s < dims_.S; ++s) {
    for (Index i = 0; i < n; ++i) {
      out.col(s).segment(i * q, q) =
          state_.mu_b.middleRows(i * q, q) * data_.y[s].col(i);
    }
  }
  return out;
}

double VbEngine::expected_residual() const {
  const Index n = dims_.N, q = dims_.Q;
  const MatrixXd btb = expected_btb();
  double total = 0.0;
  for (Index s = 0; s < dims_.S; ++s) {
    const auto& ys = data_.y[s];
    for (Index i = 0; i < n; ++i) {
      const VectorXd mu = state_.mu_u.col(s).segment(i * q, q);
      const MatrixXd second =
          mu * mu.transpose() + state_.sigma_u.block(i * q, i * q, q, q);
      const VectorXd bt_y = state_.mu_b.middleRows(i * q, q) * ys.col(i);
      total += ys.col(i).squaredNorm() - 2.0 * bt_y.dot(mu) +
               btb.block(i * q, i * q, q, q).cwiseProduct(second).sum();
    }
  }
  if (total < -1e-9 * std::max(1.0, std::abs(total))) {
    throw NumericError("expected residual is negative");
  }
  return std::max(total, 0.0);
}

MatrixXd VbEngine::latent_second_moment() const {
  MatrixXd out = state_.mu_u * state_.mu_u.transpose() +
                 double(dims_.S) * state_.sigma_u;
  return 0.5 * (out + out.transpose());
}

ZObjectiveContext VbEngine::z_context() const {
  ZObjectiveContext ctx;
  ctx.second_moment = latent_second_moment();
  ctx.n_samples = dims_.S;
  ctx.k_q = k_q_;
  ctx.kz_lower = kz_lower_;
  ctx.n_signals = dims_.Q;
  ctx.omega_u_prior = hyper_.omega_u;
  ctx.include_omega_prior = true;
  return ctx;
}

void VbEngine::update_u() {
  const Index nq = dims_.nq();
  const double omega_f = state_.omega_f.mean();
  MatrixXd d = omega_f * expected_btb();
  MatrixXd rhs = omega_f * expected_bt_y();
  if (cfg_.classification) {
    const VectorXd mu_w = state_.mu_wb.head(nq);
    const double mu_bias = state_.mu_wb(nq);
    d += mu_w * mu_w.transpose() + state_.sigma_wb.topLeftCorner(nq, nq);
    // <w b> = <w><b> + Cov(w, b).
    const VectorXd wb = mu_w * mu_bias + state_.sigma_wb.col(nq).head(nq);
    for (Index s = 0; s < dims_.S; ++s) {
      rhs.col(s) += state_.h_mean(s) * mu_w - wb;
    }
  }
  const MatrixXd lk = joint_.chol.lower();
  double log_det_m = 0.0;
  state_.sigma_u = posterior_covariance(lk, d, log_det_m, "q(u)");
  state_.log_det_sigma_u = joint_.chol.log_det() - log_det_m;
  MatrixXd mu(nq, dims_.S);
  parallel_for(dims_.S, [&](Index s) { mu.col(s) = state_.sigma_u * rhs.col(s); });
  state_.mu_u = std::move(mu);
}

void VbEngine::update_z() {
  ZObjectiveContext ctx = z_context();
  ZOptOptions opts;
  opts.max_iters = cfg_.inner_iters;
  opts.optimize_omega = cfg_.optimize_omega_u;
  const ZOptResult res = optimize_z(state_.z.z, state_.omega_u, ctx, opts);
  state_.z.z = res.z;
  state_.omega_u = res.omega_u;
  if (cfg_.optimize_lengthscales) {
    LengthscaleSearch search;
    search.enabled = true;
    const std::vector<double> ls = optimize_lengthscales(
        state_.z.z, state_.omega_u, data_.x, hyper_.lengthscales, ctx, search);
    if (ls != hyper_.lengthscales) {
      hyper_.lengthscales = ls;
      state_.lengthscales = ls;
      k_q_ = gibbs_block_matrix(data_.x, ls);
    }
  }
  refresh_joint();
}

void VbEngine::update_h() {
  if (!cfg_.classification) return;
  const Index nq = dims_.nq();
  const VectorXd& r = *data_.labels;
  const VectorXd mu_w = state_.mu_wb.head(nq);
  for (Index s = 0; s < dims_.S; ++s) {
    const double g = mu_w.dot(state_.mu_u.col(s)) + state_.mu_wb(nq);
    const TruncatedMoments tm = tn_moments(g, r(s));
    state_.h_location(s) = g;
    state_.h_mean(s) = tm.mean;
    state_.h_second(s) = tm.second;
  }
}

void VbEngine::update_wb() {
  if (!cfg_.classification) return;
  const Index nq = dims_.nq();
  MatrixXd prec(nq + 1, nq + 1);
  prec.topLeftCorner(nq, nq) = latent_second_moment();
  prec.topLeftCorner(nq, nq).diagonal().array() += state_.lambda_w.mean();
  const VectorXd u_sum = state_.mu_u.rowwise().sum();
  prec.col(nq).head(nq) = u_sum;
  prec.row(nq).head(nq) = u_sum.transpose();
  prec(nq, nq) = double(dims_.S) + state_.lambda_b.mean();
  VectorXd rhs(nq + 1);
  rhs.head(nq) = state_.mu_u * state_.h_mean;
  rhs(nq) = state_.h_mean.sum();

  Llt llt(prec);
  if (llt.info() != Eigen::Success) {
    throw NumericError("q(w,b): precision is not positive definite");
  }
  state_.sigma_wb = llt.solve(MatrixXd::Identity(nq + 1, nq + 1));
  state_.sigma_wb = (0.5 * (state_.sigma_wb + state_.sigma_wb.transpose())).eval();
  state_.log_det_sigma_wb = -2.0 * llt.matrixLLT().diagonal().array().log().sum();
  state_.mu_wb = llt.solve(rhs);
}

void VbEngine::update_lambda() {
  if (!cfg_.classification) return;
  const Index nq = dims_.nq();
  const double w_sq = state_.mu_wb.head(nq).squaredNorm() +
                      state_.sigma_wb.topLeftCorner(nq, nq).trace();
  state_.lambda_w.shape = hyper_.lambda_w.shape + 0.5 * double(nq);
  state_.lambda_w.rate = hyper_.lambda_w.rate + 0.5 * w_sq;
  const double b_sq = state_.mu_wb(nq) * state_.mu_wb(nq) + state_.sigma_wb(nq, nq);
  state_.lambda_b.shape = hyper_.lambda_b.shape + 0.5;
  state_.lambda_b.rate = hyper_.lambda_b.rate + 0.5 * b_sq;
}

void VbEngine::update_b() {
  const Index n = dims_.N, q = dims_.Q, nq = dims_.nq();
  const double omega_f = state_.omega_f.mean();
  MatrixXd u_blocks = MatrixXd::Zero(nq, nq);
  for (Index i = 0; i < n; ++i) {
    const auto mu_i = state_.mu_u.middleRows(i * q, q);  // Q x S
    u_blocks.block(i * q, i * q, q, q) =
        mu_i * mu_i.transpose() +
        double(dims_.S) * state_.sigma_u.block(i * q, i * q, q, q);
  }
  const MatrixXd lb = kron_identity_dense(kb_lower_, q);
  double log_det_m = 0.0;
  state_.sigma_b = posterior_covariance(lb, omega_f * u_blocks, log_det_m, "q(B)");
  state_.log_det_sigma_b = double(q) * log_det_kb_ - log_det_m;

  MatrixXd rhs = MatrixXd::Zero(nq, dims_.M);
  for (Index s = 0; s < dims_.S; ++s) {
    for (Index i = 0; i < n; ++i) {
      rhs.middleRows(i * q, q) +=
          state_.mu_u.col(s).segment(i * q, q) * data_.y[s].col(i).transpose();
    }
  }
  MatrixXd mu(nq, dims_.M);
  parallel_for(dims_.M, [&](Index m) {
    mu.col(m) = omega_f * (state_.sigma_b * rhs.col(m));
  });
  state_.mu_b = std::move(mu);
}

void VbEngine::update_omega_f() {
  state_.omega_f.shape =
      hyper_.omega_f.shape + 0.5 * double(dims_.N * dims_.M * dims_.S);
  state_.omega_f.rate = hyper_.omega_f.rate + 0.5 * expected_residual();
}

ElboTerms VbEngine::elbo_terms() const {
  const Index nq = dims_.nq(), q = dims_.Q;
  const double n = double(dims_.N), m = double(dims_.M), s = double(dims_.S);
  ElboTerms out;
  auto& t = out.terms;

  const GammaPosterior& of = state_.omega_f;
  t["likelihood_y"] = 0.5 * n * m * s * (of.mean_log() - kLog2Pi) -
                      0.5 * of.mean() * expected_residual();

  const MatrixXd second = latent_second_moment();
  t["prior_u"] = -0.5 * (s * double(nq) * kLog2Pi + s * joint_.chol.log_det() +
                         joint_.chol.llt.solve(second).trace());
  t["entropy_u"] =
      0.5 * s * (double(nq) * (1.0 + kLog2Pi) + state_.log_det_sigma_u);

  const double b_quad =
      kron_identity_solve_lower(kb_lower_, state_.mu_b, q).squaredNorm() +
      m * whitened_trace(kb_lower_, state_.sigma_b, q);
  t["prior_b"] = -0.5 * (m * double(nq) * kLog2Pi + m * double(q) * log_det_kb_ +
                         b_quad);
  t["entropy_b"] =
      0.5 * m * (double(nq) * (1.0 + kLog2Pi) + state_.log_det_sigma_b);

  t["prior_omega_f"] = of.expected_log_prior(hyper_.omega_f);
  t["entropy_omega_f"] = of.entropy();

  const double nu = double(dims_.nu);
  t["prior_z"] =
      -0.5 * (whiten(state_.z.z, kz_lower_, q).squaredNorm() +
              nu * double(q) * log_det_kz_ + double(nq) * nu * kLog2Pi);
  const GammaPrior& pu = hyper_.omega_u;
  t["prior_omega_u"] = pu.shape * std::log(pu.rate) - std::lgamma(pu.shape) +
                       (pu.shape - 1.0) * std::log(state_.omega_u) -
                       pu.rate * state_.omega_u;

  if (cfg_.classification) {
    const VectorXd& r = *data_.labels;
    const MatrixXd vv = state_.mu_wb * state_.mu_wb.transpose() + state_.sigma_wb;
    const VectorXd mu_w = state_.mu_wb.head(nq);
    const double mu_bias = state_.mu_wb(nq);
    double lik_h = 0.0, ent_h = 0.0;
    for (Index smp = 0; smp < dims_.S; ++smp) {
      const VectorXd mu = state_.mu_u.col(smp);
      // tr(E[v v^T] E[(u;1)(u;1)^T]).
      const double quad = vv.topLeftCorner(nq, nq).cwiseProduct(
                              mu * mu.transpose() + state_.sigma_u).sum() +
                          2.0 * vv.col(nq).head(nq).dot(mu) + vv(nq, nq);
      const double hm = state_.h_mean(smp), h2 = state_.h_second(smp);
      lik_h += -0.5 * kLog2Pi -
               0.5 * (h2 - 2.0 * hm * (mu_w.dot(mu) + mu_bias) + quad);
      const double g = state_.h_location(smp);
      ent_h += 0.5 * kLog2Pi + 0.5 * (h2 - 2.0 * g * hm + g * g) +
               log_normal_cdf(r(smp) * g);
    }
    t["likelihood_h"] = lik_h;
    t["entropy_h"] = ent_h;
    const double w_sq = mu_w.squaredNorm() + state_.sigma_wb.topLeftCorner(nq, nq).trace();
    const double b_sq = mu_bias * mu_bias + state_.sigma_wb(nq, nq);
    t["prior_w"] = 0.5 * double(nq) * (state_.lambda_w.mean_log() - kLog2Pi) -
                   0.5 * state_.lambda_w.mean() * w_sq;
    t["prior_bias"] = 0.5 * (state_.lambda_b.mean_log() - kLog2Pi) -
                      0.5 * state_.lambda_b.mean() * b_sq;
    t["entropy_wb"] =
        0.5 * (double(nq + 1) * (1.0 + kLog2Pi) + state_.log_det_sigma_wb);
    t["prior_lambda_w"] = state_.lambda_w.expected_log_prior(hyper_.lambda_w);
    t["prior_lambda_b"] = state_.lambda_b.expected_log_prior(hyper_.lambda_b);
    t["entropy_lambda_w"] = state_.lambda_w.entropy();
    t["entropy_lambda_b"] = state_.lambda_b.entropy();
  }
  return out;
}

double VbEngine::elbo() const { return elbo_terms().total(); }

void VbEngine::sweep(TraceRecord* record) {
  auto step = [&](const char* name, auto&& fn) {
    const auto t0 = Clock::now();
    fn();
    if (record) {
      record->seconds[name] = seconds_since(t0);
      if (cfg_.check_each_update) record->elbo_after.emplace_back(name, elbo());
    }
  };
  step("u", [&] { update_u(); });
  step("z", [&] { update_z(); });
  if (cfg_.classification) {
    step("h", [&] { update_h(); });
    step("wb", [&] { update_wb(); });
    step("lambda", [&] { update_lambda(); });
  }
  step("b", [&] { update_b(); });
  step("omega_f", [&] { update_omega_f(); });
}

void VbEngine::canonicalize_signs() {
  const Index n = dims_.N, q = dims_.Q;
  for (Index p = 0; p < q; ++p) {
    double col_sum = 0.0;
    for (Index i = 0; i < n; ++i) col_sum += state_.mu_b.row(i * q + p).sum();
    if (col_sum >= 0.0) continue;
    for (Index i = 0; i < n; ++i) {
      const Index k = i * q + p;
      state_.mu_u.row(k) *= -1.0;
      state_.sigma_u.row(k) *= -1.0;
      state_.sigma_u.col(k) *= -1.0;
      state_.mu_b.row(k) *= -1.0;
      state_.sigma_b.row(k) *= -1.0;
      state_.sigma_b.col(k) *= -1.0;
      state_.z.z.row(k) *= -1.0;
      if (cfg_.classification) {
        state_.mu_wb(k) *= -1.0;
        state_.sigma_wb.row(k) *= -1.0;
        state_.sigma_wb.col(k) *= -1.0;
      }
    }
  }
  refresh_joint();
}

FittedModel fit(const Dataset& data, const HyperParams& hyper,
                const FitConfig& cfg,
                const std::function<void(const TraceRecord&)>& on_record) {
  data.validate();
  if (cfg.max_iters < 1 || cfg.inner_iters < 1 || !(cfg.tol > 0.0)) {
    throw std::invalid_argument("fit: iteration caps must be >= 1 and tol > 0");
  }
  FittedModel model;
  model.config = cfg;

  Dataset work = data;
  if (cfg.standardize) {
    auto [std_data, stats] = standardize(data);
    work = std::move(std_data);
    model.norm = std::move(stats);
  } else {
    model.norm.mean = VectorXd::Zero(data.n_channels());
    model.norm.scale = VectorXd::Ones(data.n_channels());
  }
  if (cfg.map_inputs) {
    model.input_map = fit_input_map(data.x);
    work.x = model.input_map->apply(data.x);
  }

  VbEngine engine(work, hyper, cfg);
  engine.initialize();
  model.initial_elbo = engine.elbo();

  double previous = model.initial_elbo;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    TraceRecord rec;
    rec.iteration = it;
    try {
      engine.sweep(&rec);
      rec.elbo = engine.elbo();
    } catch (const NumericError& e) {
      throw NumericError("sweep " + std::to_string(it) + ": " + e.what());
    }
    model.trace.push_back(rec);
    if (on_record) on_record(rec);
    model.iterations = it;
    if (std::abs(rec.elbo - previous) < cfg.tol * std::abs(previous)) {
      model.converged = true;
      break;
    }
    previous = rec.elbo;
  }
  engine.canonicalize_signs();

  model.dims = engine.dims();
  model.hyper = engine.hyper();
  model.x = work.x;
  model.state = engine.state();
  model.rebuild_caches();
  return model;
}

void FittedModel::rebuild_caches() {
  k_q = gibbs_block_matrix(x, hyper.lengthscales);
  kb_lower = prior_lower(se_kernel_matrix(x, hyper.lengthscale_b, 1.0),
                         hyper.jitter, "mixing prior kernel");
  kz_lower = prior_lower(wishart_prior_kernel(x, hyper.lengthscale_z, dims.nu),
                         hyper.jitter, "Wishart prior kernel");
  joint = joint_kernel(state.z, k_q, state.omega_u);
}

MatrixXd FittedModel::to_internal_inputs(const MatrixXd& x_raw) const {
  if (x_raw.cols() != x.cols()) {
    throw std::invalid_argument("input dimension " + std::to_string(x_raw.cols()) +
                                " does not match model input dimension " +
                                std::to_string(x.cols()));
  }
  return input_map ? input_map->apply(x_raw) : x_raw;
}

MatrixXd FittedModel::latent_kernel() const {
  return hadamard_kernel(state.z.z, k_q);
}

}  // namespace lcgp
