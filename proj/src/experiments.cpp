#include "lcgp/experiments.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "lcgp/baselines.hpp"
#include "lcgp/io.hpp"
#include "lcgp/predict.hpp"
#include "lcgp/synth.hpp"
#include "lcgp/zopt.hpp"

namespace lcgp {

void ElboMonitor::observe(double elbo) {
  ++sweeps;
  if (previous) {
    const double drop = (*previous - elbo) / std::max(1.0, std::abs(*previous));
    if (drop > slack) ++violations;
    worst_drop = std::max(worst_drop, drop);
  }
  previous = elbo;
}

std::function<void(const TraceRecord&)> ElboMonitor::callback() {
  previous.reset();
  return [this](const TraceRecord& r) { observe(r.elbo); };
}

void ElboMonitor::merge(const ElboMonitor& other) {
  sweeps += other.sweeps;
  violations += other.violations;
  worst_drop = std::max(worst_drop, other.worst_drop);
}

SwitchTrial run_switch_trial(std::uint64_t seed) {
  SwitchSpec spec;
  spec.seed = seed;
  const SwitchData d = gen_switch(spec);
  const MatrixXd& y = d.data.y.front();
  SwitchTrial t;
  t.mse_wgcc = metrics(fit_wgcc_exact(d.data.x, y).fitted, d.truth).mse;
  t.mse_kronecker = metrics(fit_kronecker(d.data.x, y).fitted, d.truth).mse;
  t.mse_zero = metrics(MatrixXd::Zero(y.rows(), y.cols()), d.truth).mse;
  return t;
}

ToyTrial run_toy_trial(Index q, Index s, std::uint64_t seed, int max_iters,
                       ElboMonitor* monitor) {
  ToySpec spec;
  spec.q = q;
  spec.s = s;
  spec.n = 50;
  spec.seed = seed;
  const ToyData data = gen_toy(spec);
  HyperParams hyper;
  hyper.lengthscales = {spec.lengthscale};
  FitConfig cfg;
  cfg.q = q;
  cfg.max_iters = max_iters;
  cfg.seed = seed;
  const FittedModel model =
      fit(data.data, hyper, cfg, monitor ? monitor->callback() : nullptr);
  return {recovery_score(data.latent_cov, model.latent_kernel(), q).score, model.iterations};
}

std::vector<double> spread_lengthscales(Index q) {
  std::vector<double> out;
  for (Index p = 0; p < q; ++p) {
    out.push_back(q == 1 ? 0.3 : 0.15 * std::pow(4.0, double(p) / double(q - 1)));
  }
  return out;
}

FittedModel fit_best_of(const Dataset& data, const HyperParams& hyper, const FitConfig& cfg,
                        int restarts, ElboMonitor* monitor) {
  if (restarts < 1) throw std::invalid_argument("fit_best_of: restarts must be positive");
  std::optional<FittedModel> best;
  for (int r = 0; r < restarts; ++r) {
    FitConfig c = cfg;
    c.seed = cfg.seed + 1000ul * unsigned(r);
    FittedModel m = fit(data, hyper, c, monitor ? monitor->callback() : nullptr);
    const double elbo = m.trace.empty() ? m.initial_elbo : m.trace.back().elbo;
    if (!best || elbo > (best->trace.empty() ? best->initial_elbo : best->trace.back().elbo)) {
      best = std::move(m);
    }
  }
  return std::move(*best);
}

ResampleStudy run_resample_study(const ResampleOptions& opts, ElboMonitor* monitor) {
  MixtureSpec mix;
  mix.q = opts.base_q > 0 ? opts.base_q : opts.q;
  mix.seed = opts.base_seed;
  const Dataset base = gen_mixture(mix);

  HyperParams hyper;
  hyper.lengthscales = opts.lengthscales.empty() ? spread_lengthscales(opts.q) : opts.lengthscales;
  FitConfig cfg;
  cfg.q = opts.q;
  cfg.max_iters = opts.max_iters;
  cfg.seed = 1;
  const FittedModel base_model = fit_best_of(base, hyper, cfg, opts.restarts, monitor);
  const MatrixXd truth = base_model.latent_kernel();

  ResampleStudy out;
  out.base_iterations = base_model.iterations;
  for (int k = 0; k < opts.seeds; ++k) {
    const Dataset d = resample_from_model(base_model, 100 + k);
    FitConfig c = cfg;
    c.seed = 200 + k;
    const FittedModel m = fit_best_of(d, hyper, c, opts.restarts, monitor);
    const double score = recovery_score(truth, m.latent_kernel(), opts.q).score;
    out.scores.push_back(score);
    out.pvalues.push_back(empirical_pvalue(score, truth, base_model, opts.null_draws, 300 + k));
  }
  double total = 0.0;
  for (double s : out.scores) total += s;
  out.mean_score = out.scores.empty() ? 0.0 : total / double(out.scores.size());
  out.fisher_p = fisher_combine(out.pvalues);
  return out;
}

std::optional<JuraFiles> find_jura(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const std::pair<const char*, const char*> layouts[] = {
      {"prediction.dat", "validation.dat"},
      {"jura_train.csv", "jura_validation.csv"},
  };
  for (const auto& [train, val] : layouts) {
    if (fs::exists(dir / train) && fs::exists(dir / val)) return JuraFiles{dir / train, dir / val};
  }
  return std::nullopt;
}

JuraResult run_jura(const JuraFiles& files, int max_iters, ElboMonitor* monitor) {
  const Dataset train = read_jura(files.train);
  const Dataset val = read_jura(files.validation);
  HyperParams hyper;
  hyper.lengthscales = {0.5};
  hyper.lengthscale_b = 1.0;
  hyper.lengthscale_z = 1.0;
  FitConfig cfg;
  cfg.q = 2;
  cfg.max_iters = max_iters;
  const FittedModel model = fit(train, hyper, cfg, monitor ? monitor->callback() : nullptr);

  const MatrixXd pred = predict_outputs(model, val.x, Index(0));
  const MatrixXd& truth = val.y.front();
  JuraResult r;
  const ErrorMetrics raw = metrics(pred, truth);
  r.mae_raw = raw.mae;
  r.mse_raw = raw.mse;
  const ErrorMetrics st = metrics(model.norm.apply(pred), model.norm.apply(truth));
  r.mae_std = st.mae;
  r.mse_std = st.mse;
  r.iterations = model.iterations;
  return r;
}

GradientCheck gradient_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(1, 5), small(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Index r, Index c) {
    MatrixXd m(r, c);
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
    return m;
  };

  GradientCheck out;
  out.n = size(rng);
  out.q = small(rng);
  out.nu = small(rng);
  const Index n = out.n, q = out.q, nu = out.nu;
  MatrixXd x(n, 1);
  for (Index i = 0; i < n; ++i) x(i) = -1.0 + 2.0 * unit(rng);
  std::vector<double> ls;
  for (Index p = 0; p < q; ++p) ls.push_back(0.2 + unit(rng));

  ZObjectiveContext ctx;
  ctx.n_samples = 1 + Index(unit(rng) * 4);
  const MatrixXd w = gaussian(n * q, n * q + 2);
  ctx.second_moment = w * w.transpose() / double(w.cols());
  ctx.k_q = gibbs_block_matrix(x, ls);
  ctx.kz_lower = robust_cholesky(wishart_prior_kernel(x, 0.3 + unit(rng), nu), 1e-6, "Wishart prior").lower();
  ctx.n_signals = q;
  ctx.include_omega_prior = true;
  ctx.omega_u_prior = {2.0, 0.5};
  const MatrixXd z = gaussian(n * q, nu) / std::sqrt(double(nu));
  const double omega = 0.5 + 2.0 * unit(rng);

  const ZEvaluation e = evaluate_z(z, omega, ctx, true);
  const double h = 1e-6;
  auto value = [&](const MatrixXd& zz, double om) { return evaluate_z(zz, om, ctx, false).value; };

  MatrixXd fd_raw(z.rows(), z.cols());
  for (Index k = 0; k < z.size(); ++k) {
    MatrixXd zp = z, zm = z;
    zp.data()[k] += h;
    zm.data()[k] -= h;
    fd_raw.data()[k] = (value(zp, omega) - value(zm, omega)) / (2 * h);
  }
  const MatrixXd z_hat = whiten(z, ctx.kz_lower, q);
  MatrixXd fd_white(z.rows(), z.cols());
  for (Index k = 0; k < z.size(); ++k) {
    MatrixXd zp = z_hat, zm = z_hat;
    zp.data()[k] += h;
    zm.data()[k] -= h;
    fd_white.data()[k] = (value(unwhiten(zp, ctx.kz_lower, q), omega) -
                          value(unwhiten(zm, ctx.kz_lower, q), omega)) / (2 * h);
  }
  const double fd_omega =
      (value(z, omega * std::exp(h)) - value(z, omega * std::exp(-h))) / (2 * h);

  auto rel = [](const MatrixXd& a, const MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-12);
  };
  out.raw_error = rel(e.grad_z, fd_raw);
  out.whitened_error = rel(e.grad_z_hat, fd_white);
  out.omega_error = std::abs(e.grad_log_omega - fd_omega) / std::max(std::abs(fd_omega), 1e-12);
  return out;
}

}  // namespace lcgp
