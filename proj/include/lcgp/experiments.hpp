#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lcgp/core.hpp"
#include "lcgp/model.hpp"
#include "lcgp/vb.hpp"

namespace lcgp {

/// Counts per-sweep ELBO decreases beyond a relative slack.
struct ElboMonitor {
  double slack = 1e-8;
  int sweeps = 0;
  int violations = 0;
  double worst_drop = 0.0;  // largest relative decrease seen
  std::optional<double> previous;

  void observe(double elbo);
  std::function<void(const TraceRecord&)> callback();
  void merge(const ElboMonitor& other);
};

struct SwitchTrial {
  double mse_wgcc = 0.0;
  double mse_kronecker = 0.0;
  double mse_zero = 0.0;
};

SwitchTrial run_switch_trial(std::uint64_t seed);

struct ToyTrial {
  double score = 0.0;
  int iterations = 0;
};

// One toy recovery fit; the ELBO trace feeds `monitor` when given.
ToyTrial run_toy_trial(Index q, Index s, std::uint64_t seed, int max_iters,
                       ElboMonitor* monitor = nullptr);

struct ResampleOptions {
  Index q = 2;
  Index base_q = 3;  // signals in the base data; 0 selects q
  std::vector<double> lengthscales{0.3};  // fit lengthscales; empty selects a spread
  int restarts = 1;                        // per fit, best final ELBO kept
  int seeds = 10;
  int max_iters = 400;
  int null_draws = 200;
  std::uint64_t base_seed = 7;
};

struct ResampleStudy {
  std::vector<double> scores;
  std::vector<double> pvalues;
  double mean_score = 0.0;
  double fisher_p = 1.0;
  int base_iterations = 0;
};

// Fits `restarts` times from seeds cfg.seed, cfg.seed + 1000, ... and keeps
// the fit with the highest final ELBO.
FittedModel fit_best_of(const Dataset& data, const HyperParams& hyper, const FitConfig& cfg,
                        int restarts, ElboMonitor* monitor = nullptr);

/// Fits a base model to mixture data, then repeatedly draws datasets from
/// it, refits and scores the recovered latent covariance against the base.
ResampleStudy run_resample_study(const ResampleOptions& opts,
                                 ElboMonitor* monitor = nullptr);

// Signal lengthscales spread geometrically over [0.15, 0.6].
std::vector<double> spread_lengthscales(Index q);

struct JuraFiles {
  std::filesystem::path train;
  std::filesystem::path validation;
};

// Looks for prediction.dat / validation.dat (or jura_train.csv /
// jura_validation.csv) in `dir`.
std::optional<JuraFiles> find_jura(const std::filesystem::path& dir);

struct JuraResult {
  double mae_raw = 0.0;
  double mse_raw = 0.0;
  double mae_std = 0.0;  // in training-standardized units, averaged over metals
  double mse_std = 0.0;
  int iterations = 0;
};

JuraResult run_jura(const JuraFiles& files, int max_iters,
                    ElboMonitor* monitor = nullptr);

struct GradientCheck {
  Index n = 0, q = 0, nu = 0;
  double raw_error = 0.0;       // max |analytic - numeric| / max |numeric|
  double whitened_error = 0.0;
  double omega_error = 0.0;
};

// Central finite differences of the Wishart-factor objective on a random
// instance with n <= 5, q <= 3, nu <= 3.
GradientCheck gradient_check(std::uint64_t seed);

}  // namespace lcgp
