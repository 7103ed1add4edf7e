#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcgp/experiments.hpp"
#include "lcgp/io.hpp"
#include "lcgp/kernels.hpp"
#include "lcgp/predict.hpp"
#include "lcgp/synth.hpp"
#include "lcgp/vb.hpp"

using namespace lcgp;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kNumeric = 3, kNotConverged = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<fs::path> as_paths(const std::vector<std::string>& v) {
  return {v.begin(), v.end()};
}

Dataset load_data(const std::vector<std::string>& files) {
  if (files.empty()) throw UsageError("no data files given (use --data)");
  if (files.size() == 1 && fs::path(files.front()).extension() == ".dat") return read_jura(files.front());
  return read_dataset(as_paths(files));
}

HyperParams hyper_from(const RunConfig& c) {
  HyperParams h;
  h.lengthscales = {c.lu};
  h.lengthscale_b = c.lb;
  h.lengthscale_z = c.lz;
  return h;
}

FitConfig fit_config_from(const RunConfig& c) {
  FitConfig f;
  f.q = c.q;
  f.nu = c.nu;
  f.classification = c.classify;
  f.seed = c.seed;
  f.max_iters = c.max_iters;
  f.tol = c.tol;
  f.map_inputs = c.map_inputs;
  return f;
}

void emit(const RunConfig& c, const std::string& text, const json& record) {
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ofstream(out / "report.txt") << text;
  std::ofstream(out / "metrics.json") << record.dump(2) << "\n";
  if (c.format == "json") {
    std::cout << record.dump(2) << "\n";
  } else {
    std::cout << text;
  }
}

int cmd_fit(const RunConfig& c) {
  Dataset data = load_data(c.data);
  if (c.classify) {
    if (c.labels.empty()) throw UsageError("--classify needs --labels");
    data.labels = read_labels(c.labels, as_paths(c.data));
  }
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ofstream trace(out / "trace.csv");
  std::ofstream timings(out / "timings.csv");
  trace << "iteration,elbo\n" << std::setprecision(17);
  timings << "iteration,factor,seconds\n";
  const FittedModel model = fit(data, hyper_from(c), fit_config_from(c), [&](const TraceRecord& r) {
    trace << r.iteration << "," << r.elbo << "\n";
    for (const auto& [name, secs] : r.seconds) timings << r.iteration << "," << name << "," << secs << "\n";
  });
  save_model(out / "model.lcgp", model);
  std::ofstream(out / "config.txt") << c.to_text();

  json record = {{"iterations", model.iterations},
                 {"converged", model.converged},
                 {"elbo", model.trace.empty() ? model.initial_elbo : model.trace.back().elbo}};
  std::ostringstream text;
  text << "iterations " << model.iterations << (model.converged ? " (converged)" : " (iteration cap)")
       << "\nfinal elbo " << record["elbo"].get<double>() << "\n";
  if (!c.validation.empty()) {
    const Dataset val = load_data(c.validation);
    if (val.n_channels() != model.dims.M) {
      throw UsageError("validation data has " + std::to_string(val.n_channels()) +
                       " channels, model has " + std::to_string(model.dims.M));
    }
    MatrixXd pred_all(model.dims.M, 0), truth_all(model.dims.M, 0);
    for (Index s = 0; s < val.n_samples(); ++s) {
      const MatrixXd pred = predict_outputs(model, val.x, std::min(s, model.dims.S - 1));
      pred_all.conservativeResize(Eigen::NoChange, pred_all.cols() + pred.cols());
      pred_all.rightCols(pred.cols()) = pred;
      truth_all.conservativeResize(Eigen::NoChange, truth_all.cols() + pred.cols());
      truth_all.rightCols(pred.cols()) = val.y[s];
    }
    const ErrorMetrics raw = metrics(pred_all, truth_all);
    const ErrorMetrics st = metrics(model.norm.apply(pred_all), model.norm.apply(truth_all));
    record["mae"] = raw.mae;
    record["mse"] = raw.mse;
    record["mae_standardized"] = st.mae;
    record["mse_standardized"] = st.mse;
    text << "validation mae " << raw.mae << " mse " << raw.mse << "\n"
         << "validation (standardized) mae " << st.mae << " mse " << st.mse << "\n";
    if (model.state.classification && !c.labels.empty() && val.x.rows() == model.dims.N) {
      // Validation labels share the training labels file layout.
      const fs::path vlabels = fs::path(c.labels).replace_filename("validation_labels.csv");
      if (fs::exists(vlabels)) {
        const VectorXd r = read_labels(vlabels, as_paths(c.validation));
        VectorXd prob(val.n_samples());
        for (Index s = 0; s < val.n_samples(); ++s) prob(s) = predict_label(model, val.y[s]);
        record["auc"] = auc(prob, r);
        text << "validation auc " << record["auc"].get<double>() << "\n";
      }
    }
  }
  emit(c, text.str(), record);
  return model.converged ? kOk : kNotConverged;
}

int cmd_predict(const RunConfig& c, Index sample) {
  if (c.model.empty()) throw UsageError("predict needs --model");
  if (c.data.empty()) throw UsageError("predict needs --data");
  const FittedModel model = load_model(c.model);
  const fs::path out(c.out);
  fs::create_directories(out);
  if (model.state.classification) {
    const Dataset d = read_dataset(as_paths(c.data));
    MatrixXd prob(d.n_samples(), 1);
    for (Index s = 0; s < d.n_samples(); ++s) prob(s) = predict_label(model, d.y[s]);
    write_matrix_csv(out / "probabilities.csv", prob, {"p_positive"});
    std::cout << "wrote " << (out / "probabilities.csv").string() << "\n";
    return kOk;
  }
  const SampleTable t = read_sample_csv(c.data.front());
  const MatrixXd pred = predict_outputs(model, t.x, sample);
  write_sample_csv(out / "predictions.csv", t.x, pred, t.channel_names);
  std::cout << "wrote " << (out / "predictions.csv").string() << "\n";
  return kOk;
}

int cmd_simulate(const RunConfig& c) {
  const fs::path out(c.out);
  fs::create_directories(out);
  auto write_samples = [&](const Dataset& d) {
    for (Index s = 0; s < d.n_samples(); ++s) {
      write_sample_csv(out / ("sample_" + std::to_string(s) + ".csv"), d.x, d.y[s], d.channel_names);
    }
    if (d.labels) write_labels(out / "labels.csv", *d.labels);
  };
  if (c.preset == "switch") {
    SwitchSpec spec;
    spec.seed = c.seed;
    if (c.points > 0) spec.n = c.points;
    const SwitchData d = gen_switch(spec);
    write_samples(d.data);
    write_sample_csv(out / "truth.csv", d.data.x, d.truth, d.data.channel_names);
  } else if (c.preset == "toy") {
    ToySpec spec;
    spec.q = c.q;
    spec.s = c.samples;
    spec.seed = c.seed;
    spec.lengthscale = c.lu;
    if (c.points > 0) spec.n = c.points;
    const ToyData d = gen_toy(spec);
    write_samples(d.data);
    std::vector<std::string> names;
    for (Index p = 0; p < spec.q; ++p) names.push_back("s" + std::to_string(p + 1));
    write_matrix_csv(out / "sigma_true.csv", d.sigma_true, names);
  } else if (c.preset == "resample") {
    if (c.model.empty()) throw UsageError("the resample preset needs --model");
    const FittedModel model = load_model(c.model);
    write_samples(resample_from_model(model, c.seed, c.samples));
    write_matrix_csv(out / "latent_cov.csv", model.latent_kernel());
  } else {
    throw UsageError("simulate needs --preset switch, toy or resample");
  }
  std::cout << "wrote " << c.preset << " data to " << out.string() << "\n";
  return kOk;
}

int cmd_evaluate(const RunConfig& c, const std::vector<std::string>& truth_files,
                 const std::vector<double>& pvalues, int seeds) {
  json record = json::object();
  std::ostringstream text;
  text << std::setprecision(6);

  if (!c.data.empty() && !truth_files.empty()) {
    const Dataset pred = read_dataset(as_paths(c.data));
    const Dataset truth = read_dataset(as_paths(truth_files));
    if (pred.n_samples() != truth.n_samples() || pred.y[0].rows() != truth.y[0].rows() ||
        pred.y[0].cols() != truth.y[0].cols()) {
      throw UsageError("predictions and truth differ in shape");
    }
    MatrixXd p(pred.y[0].rows(), 0), t(p.rows(), 0);
    for (Index s = 0; s < pred.n_samples(); ++s) {
      p.conservativeResize(Eigen::NoChange, p.cols() + pred.y[s].cols());
      p.rightCols(pred.y[s].cols()) = pred.y[s];
      t.conservativeResize(Eigen::NoChange, t.cols() + truth.y[s].cols());
      t.rightCols(truth.y[s].cols()) = truth.y[s];
    }
    const ErrorMetrics m = metrics(p, t);
    record["mae"] = m.mae;
    record["mse"] = m.mse;
    text << "mae " << m.mae << "\nmse " << m.mse << "\n";
  }

  if (!c.model.empty() && !truth_files.empty() && c.data.empty()) {
    const FittedModel model = load_model(c.model);
    const MatrixXd sigma = read_matrix_csv(truth_files.front());
    if (sigma.rows() != model.dims.Q || sigma.cols() != model.dims.Q) {
      throw UsageError("truth covariance is " + std::to_string(sigma.rows()) + "x" +
                       std::to_string(sigma.cols()) + ", model has Q = " + std::to_string(model.dims.Q));
    }
    const MatrixXd truth = kronecker_kernel(sigma, se_kernel_matrix(model.x, c.lu, 1.0));
    const RecoveryScore r = recovery_score(truth, model.latent_kernel(), model.dims.Q);
    const double p = empirical_pvalue(r.score, truth, model, 200, c.seed);
    record["recovery_score"] = r.score;
    record["p_value"] = p;
    text << "recovery score " << r.score << "\nempirical p " << p << "\n";
  }

  if (!c.labels.empty() && !c.data.empty() && truth_files.empty()) {
    const MatrixXd scores = read_matrix_csv(c.data.front());
    const MatrixXd lab = read_matrix_csv(c.labels);
    if (scores.rows() != lab.rows()) throw UsageError("scores and labels differ in length");
    record["auc"] = auc(scores.col(0), lab.col(lab.cols() - 1));
    text << "auc " << record["auc"].get<double>() << "\n";
  }

  if (!pvalues.empty()) {
    record["fisher_statistic"] = fisher_statistic(pvalues);
    record["fisher_p"] = fisher_combine(pvalues);
    text << "fisher statistic " << fisher_statistic(pvalues) << " (" << 2 * pvalues.size()
         << " dof)\ncombined p " << fisher_combine(pvalues) << "\n";
  }

  if (c.preset == "toy") {
    json table = json::array();
    text << "Q=" << c.q << " recovery over S (" << seeds << " seeds)\n";
    for (Index s : {1, 5, 10, 20}) {
      double total = 0.0;
      for (int k = 0; k < seeds; ++k) total += run_toy_trial(c.q, s, c.seed + k, c.max_iters).score;
      table.push_back({{"S", s}, {"score", total / seeds}});
      text << "  S=" << s << "  " << total / seeds << "\n";
    }
    record["toy"] = table;
  } else if (c.preset == "switch") {
    double w = 0, k = 0, z = 0;
    for (int s = 0; s < seeds; ++s) {
      const SwitchTrial t = run_switch_trial(c.seed + s);
      w += t.mse_wgcc;
      k += t.mse_kronecker;
      z += t.mse_zero;
    }
    record["switch"] = {{"wgcc", w / seeds}, {"kronecker", k / seeds}, {"zero", z / seeds}};
    text << "switch mse  wgcc " << w / seeds << "  kronecker " << k / seeds << "  zero " << z / seeds
         << "\n";
  } else if (c.preset == "resample") {
    ResampleOptions o;
    o.q = c.q;
    o.seeds = seeds;
    o.max_iters = c.max_iters;
    o.base_seed = c.seed;
    const ResampleStudy r = run_resample_study(o);
    record["resample"] = {{"scores", r.scores},
                          {"p_values", r.pvalues},
                          {"mean_score", r.mean_score},
                          {"fisher_p", r.fisher_p}};
    text << "resample Q=" << c.q << " mean score " << r.mean_score << "  fisher p " << r.fisher_p
         << "\n";
  } else if (!c.preset.empty()) {
    throw UsageError("unknown preset '" + c.preset + "'");
  }

  if (record.empty()) throw UsageError("nothing to evaluate");
  emit(c, text.str(), record);
  return kOk;
}

int cmd_gradcheck(const RunConfig& c) {
  double worst = 0.0;
  std::cout << std::setprecision(3);
  for (Index k = 0; k < c.samples; ++k) {
    const GradientCheck g = gradient_check(c.seed + std::uint64_t(k));
    std::cout << "N=" << g.n << " Q=" << g.q << " nu=" << g.nu << "  raw " << g.raw_error
              << "  whitened " << g.whitened_error << "  log-omega " << g.omega_error << "\n";
    worst = std::max({worst, g.raw_error, g.whitened_error, g.omega_error});
  }
  std::cout << "max relative error " << worst << "\n";
  return worst < 1e-4 ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent correlation Gaussian process: fit, predict, simulate, evaluate"};
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig cfg;
  std::string config_file;
  std::vector<std::string> truth_files;
  std::vector<double> pvalues;
  int seeds = 5;
  Index sample = 0;

  std::vector<CLI::Option*> opts;
  auto add = [&](CLI::Option* o) {
    opts.push_back(o);
    return o;
  };
  app.add_option("--config", config_file, "key=value file; command-line flags take precedence");
  add(app.add_option("--data", cfg.data, "sample CSV files (or a Jura .dat file)"));
  add(app.add_option("--labels", cfg.labels, "labels file (sample,label)"));
  add(app.add_option("--validation", cfg.validation, "validation sample files"));
  add(app.add_option("--q", cfg.q, "latent signals")->check(CLI::PositiveNumber));
  add(app.add_option("--nu", cfg.nu, "Wishart degrees of freedom (0: Q)")->check(CLI::NonNegativeNumber));
  add(app.add_option("--lu", cfg.lu, "latent signal lengthscale")->check(CLI::PositiveNumber));
  add(app.add_option("--lb", cfg.lb, "mixing lengthscale")->check(CLI::PositiveNumber));
  add(app.add_option("--lz", cfg.lz, "Wishart factor lengthscale")->check(CLI::PositiveNumber));
  add(app.add_flag("--classify", cfg.classify, "fit the probit classifier"));
  add(app.add_option("--seed", cfg.seed, "random seed"));
  add(app.add_option("--max-iters", cfg.max_iters, "outer sweeps")->check(CLI::PositiveNumber));
  add(app.add_option("--tol", cfg.tol, "relative ELBO tolerance")->check(CLI::PositiveNumber));
  add(app.add_option("--out", cfg.out, "output directory"));
  add(app.add_option("--model", cfg.model, "model archive"));
  add(app.add_option("--preset", cfg.preset, "switch, toy or resample")
          ->check(CLI::IsMember({"switch", "toy", "resample"})));
  add(app.add_option("--format", cfg.format, "report format")->check(CLI::IsMember({"csv", "json"})));
  add(app.add_option("--samples", cfg.samples, "sample count (simulate), instances (gradcheck)")
          ->check(CLI::PositiveNumber));
  add(app.add_option("--points", cfg.points, "input points for generated data")->check(CLI::NonNegativeNumber));
  add(app.add_flag("--map-inputs", cfg.map_inputs, "map every input column onto [-1, 1]"));
  app.add_option("--truth", truth_files, "truth files for evaluate");
  app.add_option("--pvalues", pvalues, "p-values to combine with Fisher's method");
  app.add_option("--sample", sample, "training sample whose latent values drive predict")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seeds", seeds, "seeds per preset study (evaluate)")->check(CLI::PositiveNumber);

  std::vector<CLI::App*> commands;
  for (const char* name : {"fit", "predict", "simulate", "evaluate", "gradcheck"}) {
    commands.push_back(app.add_subcommand(name, std::string(name) + " command"));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw UsageError("cannot read config file " + config_file);
      std::stringstream buf;
      buf << in.rdbuf();
      const RunConfig file = RunConfig::from_text(buf.str());
      RunConfig merged = file;
      // Copy every field whose flag was given on the command line.
      auto given = [&](const char* name) { return app.get_option(name)->count() > 0; };
      if (given("--data")) merged.data = cfg.data;
      if (given("--labels")) merged.labels = cfg.labels;
      if (given("--validation")) merged.validation = cfg.validation;
      if (given("--q")) merged.q = cfg.q;
      if (given("--nu")) merged.nu = cfg.nu;
      if (given("--lu")) merged.lu = cfg.lu;
      if (given("--lb")) merged.lb = cfg.lb;
      if (given("--lz")) merged.lz = cfg.lz;
      if (given("--classify")) merged.classify = cfg.classify;
      if (given("--seed")) merged.seed = cfg.seed;
      if (given("--max-iters")) merged.max_iters = cfg.max_iters;
      if (given("--tol")) merged.tol = cfg.tol;
      if (given("--out")) merged.out = cfg.out;
      if (given("--model")) merged.model = cfg.model;
      if (given("--preset")) merged.preset = cfg.preset;
      if (given("--format")) merged.format = cfg.format;
      if (given("--samples")) merged.samples = cfg.samples;
      if (given("--points")) merged.points = cfg.points;
      if (given("--map-inputs")) merged.map_inputs = cfg.map_inputs;
      cfg = merged;
    }
    for (const CLI::App* sub : commands) {
      if (sub->parsed()) cfg.command = sub->get_name();
    }
    if (cfg.command == "fit") return cmd_fit(cfg);
    if (cfg.command == "predict") return cmd_predict(cfg, sample);
    if (cfg.command == "simulate") return cmd_simulate(cfg);
    if (cfg.command == "evaluate") return cmd_evaluate(cfg, truth_files, pvalues, seeds);
    if (cfg.command == "gradcheck") return cmd_gradcheck(cfg);
    throw UsageError("unknown command");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
}
