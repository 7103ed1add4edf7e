#include "lcgp/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace lcgp {

void Dims::validate() const {
  if (N < 1 || M < 1 || Q < 1 || S < 1 || nu < 1) {
    throw std::invalid_argument("dimensions N, M, Q, S, nu must all be >= 1");
  }
}

Index flatten(Index i, Index p, const Dims& dims) {
  if (i < 0 || i >= dims.N || p < 0 || p >= dims.Q) {
    throw std::out_of_range("flatten: index (" + std::to_string(i) + ", " +
                            std::to_string(p) + ") outside N=" +
                            std::to_string(dims.N) + ", Q=" +
                            std::to_string(dims.Q));
  }
  return i * dims.Q + p;
}

std::pair<Index, Index> unflatten(Index flat, const Dims& dims) {
  if (flat < 0 || flat >= dims.nq()) {
    throw std::out_of_range("unflatten: index " + std::to_string(flat) +
                            " outside [0, NQ)");
  }
  return {flat / dims.Q, flat % dims.Q};
}

void Dataset::validate() const {
  if (y.empty()) throw std::invalid_argument("dataset has no samples");
  if (x.rows() < 1 || x.cols() < 1) {
    throw std::invalid_argument("dataset has no input points");
  }
  const Index m = y.front().rows();
  if (m < 1) throw std::invalid_argument("dataset has no output channels");
  for (std::size_t s = 0; s < y.size(); ++s) {
    if (y[s].rows() != m || y[s].cols() != x.rows()) {
      throw std::invalid_argument(
          "sample " + std::to_string(s) + " has shape " +
          std::to_string(y[s].rows()) + "x" + std::to_string(y[s].cols()) +
          ", expected " + std::to_string(m) + "x" + std::to_string(x.rows()));
    }
    if (!y[s].allFinite()) {
      throw std::invalid_argument("sample " + std::to_string(s) +
                                  " contains non-finite values");
    }
  }
  if (labels) {
    if (labels->size() != n_samples()) {
      throw std::invalid_argument("label count " +
                                  std::to_string(labels->size()) +
                                  " does not match sample count " +
                                  std::to_string(n_samples()));
    }
    for (Index s = 0; s < labels->size(); ++s) {
      const double r = (*labels)(s);
      if (r != 1.0 && r != -1.0) {
        throw std::invalid_argument("label of sample " + std::to_string(s) +
                                    " is not -1 or +1");
      }
    }
  }
}

MatrixXd NormStats::apply(const MatrixXd& y) const {
  return ((y.colwise() - mean).array().colwise() / scale.array()).matrix();
}

MatrixXd NormStats::invert(const MatrixXd& y) const {
  return ((y.array().colwise() * scale.array()).matrix().colwise() + mean);
}

std::pair<Dataset, NormStats> standardize(const Dataset& data) {
  data.validate();
  const Index m = data.n_channels();
  const double count = static_cast<double>(data.n_samples() * data.n_inputs());

  NormStats stats;
  stats.mean = VectorXd::Zero(m);
  for (const auto& ys : data.y) stats.mean += ys.rowwise().sum();
  stats.mean /= count;

  VectorXd var = VectorXd::Zero(m);
  for (const auto& ys : data.y) {
    var += (ys.colwise() - stats.mean).array().square().rowwise().sum().matrix();
  }
  var /= count;
  stats.scale = var.cwiseSqrt();
  for (Index c = 0; c < m; ++c) {
    if (!(stats.scale(c) > 0.0)) {
      const std::string name = c < static_cast<Index>(data.channel_names.size())
                                   ? data.channel_names[c]
                                   : std::to_string(c);
      throw std::invalid_argument("channel '" + name +
                                  "' is constant and cannot be standardized");
    }
  }

  Dataset out = data;
  for (auto& ys : out.y) ys = stats.apply(ys);
  return {std::move(out), std::move(stats)};
}

Dataset destandardize(const Dataset& data, const NormStats& stats) {
  Dataset out = data;
  for (auto& ys : out.y) ys = stats.invert(ys);
  return out;
}

MatrixXd InputMap::apply(const MatrixXd& x) const {
  return ((x.rowwise() - offset.transpose()).array().rowwise() /
          scale.transpose().array())
      .matrix();
}

InputMap fit_input_map(const MatrixXd& x) {
  InputMap map;
  const VectorXd lo = x.colwise().minCoeff();
  const VectorXd hi = x.colwise().maxCoeff();
  map.offset = 0.5 * (lo + hi);
  map.scale = 0.5 * (hi - lo);
  for (Index d = 0; d < map.scale.size(); ++d) {
    if (!(map.scale(d) > 0.0)) map.scale(d) = 1.0;
  }
  return map;
}

HyperParams HyperParams::with_signals(Index q) const {
  HyperParams out = *this;
  if (out.lengthscales.size() == 1 && q > 1) {
    out.lengthscales.assign(static_cast<std::size_t>(q), lengthscales.front());
  }
  return out;
}

void HyperParams::validate(Index q) const {
  if (static_cast<Index>(lengthscales.size()) != q) {
    throw std::invalid_argument("expected " + std::to_string(q) +
                                " signal lengthscales, got " +
                                std::to_string(lengthscales.size()));
  }
  for (double l : lengthscales) {
    if (!(l > 0.0)) throw std::invalid_argument("lengthscales must be positive");
  }
  if (!(lengthscale_z > 0.0) || !(lengthscale_b > 0.0)) {
    throw std::invalid_argument("lengthscales must be positive");
  }
  for (const GammaPrior* g : {&omega_f, &omega_u, &lambda_w, &lambda_b}) {
    if (!(g->shape > 0.0) || !(g->rate > 0.0)) {
      throw std::invalid_argument("Gamma prior parameters must be positive");
    }
  }
  if (!(jitter > 0.0)) throw std::invalid_argument("jitter must be positive");
}

unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LCGP_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

void parallel_for(Index n, const std::function<void(Index)>& fn) {
  const unsigned workers =
      static_cast<unsigned>(std::min<Index>(n, static_cast<Index>(worker_count())));
  if (workers <= 1) {
    for (Index k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (Index k = next++; k < n; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace lcgp
