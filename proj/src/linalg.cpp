#include "lcgp/linalg.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

namespace lcgp {

namespace {

constexpr double kMaxRelativeJitter = 1e-4;
constexpr double kTailSwitch = -6.0;

// Phi(-x) / phi(x) for x > 0 by backward evaluation of the Laplace continued
// fraction 1 / (x + 1 / (x + 2 / (x + 3 / ...))).
double mills_ratio(double x) {
  double tail = x;
  for (int k = 200; k >= 1; --k) tail = x + k / tail;
  return 1.0 / tail;
}

}  // namespace

double Factor::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Factor robust_cholesky(const MatrixXd& a, double base_jitter,
                       const std::string& what) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument(what + ": matrix is not square");
  }
  const double scale = std::max(a.diagonal().mean(), 1e-300);
  Factor f;
  double rel = base_jitter;
  while (true) {
    MatrixXd work = a;
    if (rel > 0.0) work.diagonal().array() += rel * scale;
    f.llt.compute(work);
    if (f.llt.info() == Eigen::Success &&
        f.llt.matrixLLT().diagonal().allFinite() &&
        (f.llt.matrixLLT().diagonal().array() > 0.0).all()) {
      f.jitter_added = rel * scale;
      return f;
    }
    if (rel >= kMaxRelativeJitter) break;
    rel = rel > 0.0 ? rel * 10.0 : 1e-8;
    if (rel > kMaxRelativeJitter) rel = kMaxRelativeJitter;
  }
  throw NumericError(what + ": Cholesky failed after jitter escalation");
}

MatrixXd with_jitter(const MatrixXd& a, const Factor& f) {
  MatrixXd out = a;
  out.diagonal().array() += f.jitter_added;
  return out;
}

double max_asymmetry(const MatrixXd& a) {
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

double min_eigenvalue(const MatrixXd& a) {
  const MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double normal_pdf(double t) {
  return std::exp(-0.5 * t * t - 0.5 * kLog2Pi);
}

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

double log_normal_cdf(double t) {
  if (t > kTailSwitch) return std::log(normal_cdf(t));
  return -0.5 * t * t - 0.5 * kLog2Pi + std::log(mills_ratio(-t));
}

double inverse_mills(double t) {
  if (t > kTailSwitch) return normal_pdf(t) / normal_cdf(t);
  return 1.0 / mills_ratio(-t);
}

}  // namespace lcgp
