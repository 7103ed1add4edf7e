#include <doctest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "helpers.hpp"
#include "lcgp/experiments.hpp"
#include "lcgp/linalg.hpp"
#include "lcgp/model.hpp"
#include "lcgp/vb.hpp"

using namespace lcgp;
using testing::randn;
using testing::rel_error;

namespace {

// N = 3, Q = 2, M = 2: NQ = 6.
Dataset tiny_data(std::uint64_t seed, Index s = 4, bool labels = true) {
  std::mt19937_64 rng(seed);
  Dataset d;
  d.x = MatrixXd(3, 1);
  d.x << -0.6, 0.1, 0.7;
  for (Index k = 0; k < s; ++k) d.y.push_back(randn(2, 3, rng));
  if (labels) {
    VectorXd r(s);
    for (Index k = 0; k < s; ++k) r(k) = k % 2 == 0 ? 1.0 : -1.0;
    d.labels = r;
  }
  return d;
}

FitConfig tiny_config(bool classify) {
  FitConfig c;
  c.q = 2;
  c.classification = classify;
  c.seed = 3;
  return c;
}

HyperParams tiny_hyper() {
  HyperParams h;
  h.lengthscales = {0.4, 0.9};
  h.lengthscale_b = 0.8;
  h.lengthscale_z = 0.7;
  return h;
}

// Stacked mixing operator: rows (i, m), columns (i, p); y_stacked = B u.
MatrixXd stacked_mixing(const MatrixXd& mu_b, Index n, Index q, Index m) {
  MatrixXd b = MatrixXd::Zero(n * m, n * q);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < m; ++c) b.block(i * m + c, i * q, 1, q) = mu_b.col(c).segment(i * q, q).transpose();
  }
  return b;
}

VectorXd stacked(const MatrixXd& y) { return Eigen::Map<const VectorXd>(y.data(), y.size()); }

MatrixXd dense_prior(const MatrixXd& lower, Index q) {
  const MatrixXd l = testing::kron(lower, MatrixXd::Identity(q, q));
  return l * l.transpose();
}

}  // namespace

TEST_CASE("q(u) equals the exact Gaussian conditional when B is known") {
  const Dataset d = tiny_data(1, 4, false);
  VbEngine e(d, tiny_hyper(), tiny_config(false));
  e.initialize();
  e.sweep();
  e.mutable_state().sigma_b.setZero();
  e.update_u();

  const VariationalState& st = e.state();
  const MatrixXd k = with_jitter(e.joint().k, e.joint().chol);
  const MatrixXd b = stacked_mixing(st.mu_b, 3, 2, 2);
  const double noise = 1.0 / st.omega_f.mean();
  MatrixXd s_yy = b * k * b.transpose();
  s_yy.diagonal().array() += noise;
  const MatrixXd gain = k * b.transpose() * s_yy.inverse();
  const MatrixXd cov = k - gain * b * k;
  CHECK(rel_error(st.sigma_u, cov) < 1e-8);
  for (Index s = 0; s < 4; ++s) {
    CHECK(rel_error(MatrixXd(st.mu_u.col(s)), MatrixXd(gain * stacked(d.y[s]))) < 1e-8);
  }
  CHECK(rel_error(st.log_det_sigma_u, std::log(cov.determinant())) < 1e-8);
}

TEST_CASE("q(u) with classifier terms equals the exact conditional given y and h") {
  const Dataset d = tiny_data(2);
  VbEngine e(d, tiny_hyper(), tiny_config(true));
  e.initialize();
  e.sweep();
  VariationalState& st = e.mutable_state();
  st.sigma_b.setZero();
  st.sigma_wb.setZero();
  e.update_u();

  const Index nq = 6;
  const MatrixXd k = with_jitter(e.joint().k, e.joint().chol);
  const MatrixXd b = stacked_mixing(st.mu_b, 3, 2, 2);
  const VectorXd w = st.mu_wb.head(nq);
  const double bias = st.mu_wb(nq);
  MatrixXd obs(b.rows() + 1, nq);
  obs << b, w.transpose();
  MatrixXd noise = MatrixXd::Zero(obs.rows(), obs.rows());
  noise.diagonal().head(b.rows()).setConstant(1.0 / st.omega_f.mean());
  noise(b.rows(), b.rows()) = 1.0;
  MatrixXd s_yy = obs * k * obs.transpose() + noise;
  const MatrixXd gain = k * obs.transpose() * s_yy.inverse();
  CHECK(rel_error(st.sigma_u, MatrixXd(k - gain * obs * k)) < 1e-8);
  for (Index s = 0; s < 4; ++s) {
    VectorXd target(obs.rows());
    target << stacked(d.y[s]), st.h_mean(s) - bias;
    CHECK(rel_error(MatrixXd(st.mu_u.col(s)), MatrixXd(gain * target)) < 1e-8);
  }
}

TEST_CASE("q(u) information form with uncertain mixing and classifier") {
  const Dataset d = tiny_data(3);
  VbEngine e(d, tiny_hyper(), tiny_config(true));
  e.initialize();
  e.sweep();
  e.sweep();
  e.update_u();
  const VariationalState& st = e.state();
  const Index nq = 6, q = 2;
  const MatrixXd k = with_jitter(e.joint().k, e.joint().chol);
  const MatrixXd b = stacked_mixing(st.mu_b, 3, q, 2);
  MatrixXd btb = b.transpose() * b;
  for (Index i = 0; i < 3; ++i) btb.block(i * q, i * q, q, q) += 2.0 * st.sigma_b.block(i * q, i * q, q, q);
  const MatrixXd vv = st.mu_wb * st.mu_wb.transpose() + st.sigma_wb;
  const MatrixXd prec = k.inverse() + st.omega_f.mean() * btb + vv.topLeftCorner(nq, nq);
  const MatrixXd cov = prec.inverse();
  CHECK(rel_error(st.sigma_u, cov) < 1e-8);
  for (Index s = 0; s < 4; ++s) {
    const VectorXd rhs = st.omega_f.mean() * b.transpose() * stacked(d.y[s]) +
                         st.h_mean(s) * st.mu_wb.head(nq) - vv.col(nq).head(nq);
    CHECK(rel_error(MatrixXd(st.mu_u.col(s)), MatrixXd(cov * rhs)) < 1e-8);
  }
}

TEST_CASE("q(B) equals the exact Gaussian conditional when u is known") {
  const Dataset d = tiny_data(4, 3, false);
  VbEngine e(d, tiny_hyper(), tiny_config(false));
  e.initialize();
  e.sweep();
  e.mutable_state().sigma_u.setZero();
  e.update_b();

  const VariationalState& st = e.state();
  const Index n = 3, q = 2, s_count = 3;
  const MatrixXd kb = dense_prior(e.kb_lower(), q);
  // Row m of the mixing: y_s(m, i) = b_{m,i}^T u_{s,i} + noise.
  MatrixXd design = MatrixXd::Zero(s_count * n, n * q);
  for (Index s = 0; s < s_count; ++s) {
    for (Index i = 0; i < n; ++i) design.block(s * n + i, i * q, 1, q) = st.mu_u.col(s).segment(i * q, q).transpose();
  }
  MatrixXd s_yy = design * kb * design.transpose();
  s_yy.diagonal().array() += 1.0 / st.omega_f.mean();
  const MatrixXd gain = kb * design.transpose() * s_yy.inverse();
  CHECK(rel_error(st.sigma_b, MatrixXd(kb - gain * design * kb)) < 1e-8);
  for (Index m = 0; m < 2; ++m) {
    VectorXd target(s_count * n);
    for (Index s = 0; s < s_count; ++s) target.segment(s * n, n) = d.y[s].row(m).transpose();
    CHECK(rel_error(MatrixXd(st.mu_b.col(m)), MatrixXd(gain * target)) < 1e-8);
  }
}

TEST_CASE("q(w, b) equals the exact Bayesian linear regression on h") {
  const Dataset d = tiny_data(5);
  VbEngine e(d, tiny_hyper(), tiny_config(true));
  e.initialize();
  e.sweep();
  e.mutable_state().sigma_u.setZero();
  e.update_wb();
  const VariationalState& st = e.state();
  const Index nq = 6;
  MatrixXd design(4, nq + 1);
  design.leftCols(nq) = st.mu_u.transpose();
  design.col(nq).setOnes();
  VectorXd prior_var(nq + 1);
  prior_var.head(nq).setConstant(1.0 / st.lambda_w.mean());
  prior_var(nq) = 1.0 / st.lambda_b.mean();
  const MatrixXd p = prior_var.asDiagonal();
  MatrixXd s_hh = design * p * design.transpose();
  s_hh.diagonal().array() += 1.0;
  const MatrixXd gain = p * design.transpose() * s_hh.inverse();
  CHECK(rel_error(st.sigma_wb, MatrixXd(p - gain * design * p)) < 1e-8);
  CHECK(rel_error(MatrixXd(st.mu_wb), MatrixXd(gain * st.h_mean)) < 1e-8);
}

TEST_CASE("Gamma updates are the conjugate posteriors") {
  const Dataset d = tiny_data(6);
  const HyperParams h = tiny_hyper();
  VbEngine e(d, h, tiny_config(true));
  e.initialize();
  e.sweep();
  VariationalState& st = e.mutable_state();
  st.sigma_u.setZero();
  st.sigma_b.setZero();
  e.update_omega_f();
  double rss = 0.0;
  const MatrixXd b = stacked_mixing(st.mu_b, 3, 2, 2);
  for (Index s = 0; s < 4; ++s) rss += (stacked(d.y[s]) - b * st.mu_u.col(s)).squaredNorm();
  CHECK(st.omega_f.shape == doctest::Approx(h.omega_f.shape + 0.5 * 24));
  CHECK(rel_error(st.omega_f.rate, h.omega_f.rate + 0.5 * rss) < 1e-10);

  st.sigma_wb.setZero();
  e.update_lambda();
  CHECK(st.lambda_w.shape == doctest::Approx(h.lambda_w.shape + 3.0));
  CHECK(rel_error(st.lambda_w.rate, h.lambda_w.rate + 0.5 * st.mu_wb.head(6).squaredNorm()) < 1e-12);
  CHECK(rel_error(st.lambda_b.rate, h.lambda_b.rate + 0.5 * st.mu_wb(6) * st.mu_wb(6)) < 1e-12);
}

TEST_CASE("truncated normal moments match quadrature") {
  using boost::math::quadrature::exp_sinh;
  for (double r : {1.0, -1.0}) {
    for (double g : {-10.0, -1.0, 0.0, 1.0, 10.0}) {
      // Density of h proportional to phi(h - g) on r h > 0; integrate over t = r h > 0.
      auto moment = [&](int k) {
        exp_sinh<double> integrator;
        return integrator.integrate([&](double t) {
          const double h = r * t;
          return std::pow(h, k) * std::exp(-0.5 * (h - g) * (h - g));
        }, 0.0, std::numeric_limits<double>::infinity());
      };
      const double z = moment(0);
      const double mean = moment(1) / z, second = moment(2) / z;
      const TruncatedMoments tm = tn_moments(g, r);
      CAPTURE(g);
      CAPTURE(r);
      CHECK(rel_error(tm.mean, mean) < 1e-8);
      CHECK(rel_error(tm.second, second) < 1e-8);
      CHECK(rel_error(tm.variance, second - mean * mean) < 1e-6);
    }
  }
  CHECK_THROWS_AS(tn_moments(0.0, 0.5), std::invalid_argument);
}

TEST_CASE("Gamma posterior expectations match quadrature") {
  using boost::math::quadrature::gauss_kronrod;
  const GammaPosterior q{3.5, 2.0};
  const GammaPrior prior{1.5, 0.5};
  auto density = [&](double x) {
    return std::exp(q.shape * std::log(q.rate) - std::lgamma(q.shape) + (q.shape - 1) * std::log(x) - q.rate * x);
  };
  const double upper = 60.0;
  const double e_log = gauss_kronrod<double, 61>::integrate([&](double x) { return density(x) * std::log(x); }, 0.0, upper, 15, 1e-13);
  const double ent = gauss_kronrod<double, 61>::integrate([&](double x) {
    const double p = density(x);
    return p > 0 ? -p * std::log(p) : 0.0;
  }, 0.0, upper, 15, 1e-13);
  const double e_prior = gauss_kronrod<double, 61>::integrate([&](double x) {
    return density(x) * (prior.shape * std::log(prior.rate) - std::lgamma(prior.shape) + (prior.shape - 1) * std::log(x) - prior.rate * x);
  }, 0.0, upper, 15, 1e-13);
  CHECK(q.mean() == 1.75);
  CHECK(rel_error(q.mean_log(), e_log) < 1e-9);
  CHECK(rel_error(q.entropy(), ent) < 1e-9);
  CHECK(rel_error(q.expected_log_prior(prior), e_prior) < 1e-9);
}

TEST_CASE("regression ELBO matches a hand-assembled dense evaluation") {
  const Dataset d = tiny_data(7, 3, false);
  const HyperParams h = tiny_hyper();
  VbEngine e(d, h, tiny_config(false));
  e.initialize();
  e.sweep();
  const VariationalState& st = e.state();
  const ElboTerms terms = e.elbo_terms();
  const Index n = 3, q = 2, m = 2, s_count = 3, nq = 6;
  const double two_pi = 2.0 * M_PI;

  // E log p(y | B, u, omega_f).
  double resid = 0.0;
  for (Index s = 0; s < s_count; ++s) {
    for (Index i = 0; i < n; ++i) {
      const VectorXd u = st.mu_u.col(s).segment(i * q, q);
      const MatrixXd uu = u * u.transpose() + st.sigma_u.block(i * q, i * q, q, q);
      for (Index c = 0; c < m; ++c) {
        const VectorXd b = st.mu_b.col(c).segment(i * q, q);
        const MatrixXd bb = b * b.transpose() + st.sigma_b.block(i * q, i * q, q, q);
        const double y = d.y[s](c, i);
        resid += y * y - 2 * y * b.dot(u) + (bb * uu).trace();
      }
    }
  }
  const double lik = 0.5 * n * m * s_count * (st.omega_f.mean_log() - std::log(two_pi)) - 0.5 * st.omega_f.mean() * resid;
  CHECK(rel_error(terms.terms.at("likelihood_y"), lik) < 1e-9);

  const MatrixXd k = with_jitter(e.joint().k, e.joint().chol);
  double prior_u = 0.0;
  for (Index s = 0; s < s_count; ++s) {
    const VectorXd mu = st.mu_u.col(s);
    prior_u += -0.5 * (nq * std::log(two_pi) + std::log(k.determinant()) +
                       (k.inverse() * (mu * mu.transpose() + st.sigma_u)).trace());
  }
  CHECK(rel_error(terms.terms.at("prior_u"), prior_u) < 1e-9);
  const double ent_u = s_count * 0.5 * (nq * (1 + std::log(two_pi)) + std::log(st.sigma_u.determinant()));
  CHECK(rel_error(terms.terms.at("entropy_u"), ent_u) < 1e-9);

  const MatrixXd kb = dense_prior(e.kb_lower(), q);
  double prior_b = 0.0;
  for (Index c = 0; c < m; ++c) {
    const VectorXd mu = st.mu_b.col(c);
    prior_b += -0.5 * (nq * std::log(two_pi) + std::log(kb.determinant()) +
                       (kb.inverse() * (mu * mu.transpose() + st.sigma_b)).trace());
  }
  CHECK(rel_error(terms.terms.at("prior_b"), prior_b) < 1e-9);
  const double ent_b = m * 0.5 * (nq * (1 + std::log(two_pi)) + std::log(st.sigma_b.determinant()));
  CHECK(rel_error(terms.terms.at("entropy_b"), ent_b) < 1e-9);

  const MatrixXd kz = dense_prior(e.kz_lower(), q);
  double prior_z = 0.0;
  for (Index c = 0; c < st.z.z.cols(); ++c) {
    const VectorXd z = st.z.z.col(c);
    prior_z += -0.5 * (nq * std::log(two_pi) + std::log(kz.determinant()) + z.dot(kz.inverse() * z));
  }
  CHECK(rel_error(terms.terms.at("prior_z"), prior_z) < 1e-8);
  CHECK(rel_error(terms.terms.at("prior_omega_f"), st.omega_f.expected_log_prior(h.omega_f)) < 1e-12);
  CHECK(rel_error(terms.terms.at("entropy_omega_f"), st.omega_f.entropy()) < 1e-12);
  CHECK(terms.terms.count("likelihood_h") == 0);
}

TEST_CASE("every factor update increases the ELBO") {
  for (bool classify : {false, true}) {
    const Dataset d = tiny_data(8, 6);
    FitConfig cfg = tiny_config(classify);
    cfg.check_each_update = true;
    VbEngine e(d, tiny_hyper(), cfg);
    e.initialize();
    double prev = e.elbo();
    for (int sweep = 0; sweep < 8; ++sweep) {
      TraceRecord rec;
      e.sweep(&rec);
      for (const auto& [name, value] : rec.elbo_after) {
        CAPTURE(name);
        CAPTURE(sweep);
        CHECK(value >= prev - 1e-8 * std::abs(prev));
        prev = value;
      }
    }
  }
}

TEST_CASE("sign canonicalization leaves the ELBO unchanged") {
  const Dataset d = tiny_data(9, 4);
  VbEngine e(d, tiny_hyper(), tiny_config(true));
  e.initialize();
  e.sweep();
  VariationalState& st = e.mutable_state();
  // Make signal 0's mixing sum negative.
  for (Index i = 0; i < 3; ++i) st.mu_b.row(i * 2) = -st.mu_b.row(i * 2).cwiseAbs();
  const VectorXd u0 = st.mu_u.row(0).transpose();
  const double before = e.elbo();
  e.canonicalize_signs();
  CHECK(e.elbo() == doctest::Approx(before).epsilon(1e-10));
  CHECK((e.state().mu_u.row(0).transpose() + u0).norm() == 0.0);
  for (Index p = 0; p < 2; ++p) {
    double col_sum = 0.0;
    for (Index i = 0; i < 3; ++i) col_sum += e.state().mu_b.row(i * 2 + p).sum();
    CHECK(col_sum >= 0.0);
  }
}

TEST_CASE("fit is deterministic and records a non-decreasing trace") {
  const Dataset d = tiny_data(10, 5);
  FitConfig cfg = tiny_config(true);
  cfg.max_iters = 15;
  const FittedModel a = fit(d, tiny_hyper(), cfg);
  const FittedModel b = fit(d, tiny_hyper(), cfg);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) CHECK(a.trace[k].elbo == b.trace[k].elbo);
  double prev = a.initial_elbo;
  for (const auto& r : a.trace) {
    CHECK(r.elbo >= prev - 1e-8 * std::abs(prev));
    prev = r.elbo;
  }
  CHECK(a.iterations == int(a.trace.size()));
}

TEST_CASE("classification without labels is rejected") {
  const Dataset d = tiny_data(11, 3, false);
  CHECK_THROWS_AS(VbEngine(d, tiny_hyper(), tiny_config(true)), std::invalid_argument);
}

TEST_CASE("non-finite ELBO terms are named") {
  ElboTerms t;
  t.terms["prior_u"] = 1.0;
  t.terms["entropy_b"] = std::numeric_limits<double>::quiet_NaN();
  try {
    (void)t.total();
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("entropy_b") != std::string::npos);
  }
}

TEST_CASE("best-of restarts keeps the highest final ELBO") {
  const Dataset d = tiny_data(12, 4, false);
  FitConfig cfg = tiny_config(false);
  cfg.max_iters = 10;
  const FittedModel best = fit_best_of(d, tiny_hyper(), cfg, 3);
  double top = -std::numeric_limits<double>::infinity();
  for (unsigned long r = 0; r < 3; ++r) {
    FitConfig c = cfg;
    c.seed = cfg.seed + 1000 * r;
    top = std::max(top, fit(d, tiny_hyper(), c).trace.back().elbo);
  }
  CHECK(best.trace.back().elbo == top);
  CHECK_THROWS_AS(fit_best_of(d, tiny_hyper(), cfg, 0), std::invalid_argument);
}
