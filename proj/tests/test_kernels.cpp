#include <doctest.h>

#include "helpers.hpp"
#include "lcgp/kernels.hpp"
#include "lcgp/linalg.hpp"

using namespace lcgp;
using testing::kron;
using testing::randn;

namespace {

bool symmetric_psd(const MatrixXd& k) {
  const double tol = 1e-8 * std::max(k.trace(), 1e-300);
  return max_asymmetry(k) <= 1e-12 * k.cwiseAbs().maxCoeff() && min_eigenvalue(k) >= -tol;
}

std::vector<double> random_lengthscales(Index q, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 2.0);
  std::vector<double> ls;
  for (Index p = 0; p < q; ++p) ls.push_back(u(rng));
  return ls;
}

}  // namespace

TEST_CASE("gibbs kernel matches its closed form") {
  const double lp = 0.3, lq = 0.7, d = 0.4;
  const double s2 = lp * lp + lq * lq;
  CHECK(gibbs(0.1, 0.5, lp, lq) == doctest::Approx(std::sqrt(2 * lp * lq / s2) * std::exp(-d * d / s2)).epsilon(1e-15));
  CHECK(gibbs(d * d, lp, lq) == doctest::Approx(gibbs(0.0, d, lq, lp)).epsilon(1e-15));
  CHECK(gibbs(0.0, 0.2, 0.2) == 1.0);
  CHECK_THROWS_AS(gibbs(1.0, 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("equal lengthscales reduce the block kernel to the stationary Gaussian kernel") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 2 + trial % 6, q = 1 + trial % 4;
    const MatrixXd x = testing::uniform_inputs(n, rng);
    const double l = 0.1 + 0.1 * trial;
    const MatrixXd k = gibbs_block_matrix(x, std::vector<double>(q, l));
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        const double d = x(i) - x(j);
        const double se = std::exp(-d * d / (2 * l * l));
        for (Index p = 0; p < q; ++p) {
          for (Index r = 0; r < q; ++r) CHECK(std::abs(k(i * q + p, j * q + r) - se) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("block kernels are symmetric and PSD on random instances") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.1, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 1 + trial % 8, q = 1 + trial % 4, nu = 1 + (trial / 4) % 4;
    const MatrixXd x = trial % 3 == 0 ? randn(n, 2, rng) : testing::uniform_inputs(n, rng);
    const auto ls = random_lengthscales(q, rng);
    const MatrixXd k_q = gibbs_block_matrix(x, ls);
    const MatrixXd z = randn(n * q, nu, rng);
    const MatrixXd zzt = z * z.transpose();
    const double omega = u(rng);
    const JointKernel joint = joint_kernel(WishartFactor{z, q}, k_q, omega);
    const MatrixXd a_lower = randn(q, q, rng);
    const MatrixXd kron_k = kronecker_kernel(a_lower * a_lower.transpose(), se_kernel_matrix(x, u(rng), 1.0));

    CHECK(symmetric_psd(k_q));
    CHECK(symmetric_psd(zzt));
    CHECK(symmetric_psd(hadamard_kernel(z, k_q)));
    CHECK(symmetric_psd(joint.k));
    CHECK(min_eigenvalue(joint.k) >= 1.0 / omega - 1e-8 * joint.k.trace());
    CHECK(symmetric_psd(kron_k));
  }
}

TEST_CASE("joint kernel is the Hadamard product plus a ridge") {
  std::mt19937_64 rng(5);
  const Index n = 4, q = 3, nu = 2;
  const MatrixXd x = testing::uniform_inputs(n, rng);
  const MatrixXd k_q = gibbs_block_matrix(x, {0.2, 0.5, 1.0});
  const MatrixXd z = randn(n * q, nu, rng);
  const JointKernel j = joint_kernel(WishartFactor{z, q}, k_q, 4.0);
  MatrixXd expect = (z * z.transpose()).cwiseProduct(k_q);
  expect.diagonal().array() += 0.25;
  CHECK((j.k - expect).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(joint_kernel(WishartFactor{z, q}, k_q, 0.0), std::invalid_argument);
}

TEST_CASE("cross-input block kernel agrees with the joint one") {
  std::mt19937_64 rng(6);
  const MatrixXd x = randn(5, 2, rng);
  const std::vector<double> ls{0.3, 0.9};
  const MatrixXd full = gibbs_block_matrix(x, ls);
  const MatrixXd cross = gibbs_block_matrix(x.topRows(2), x, ls);
  CHECK((cross - full.topRows(4)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(gibbs_block_matrix(x, MatrixXd::Zero(2, 1), ls), std::invalid_argument);
}

TEST_CASE("Wishart blocks and the identity factor") {
  const WishartFactor f = identity_factor(4, 3, 3);
  for (Index i = 0; i < 4; ++i) CHECK(wishart_block(f, i, i).isIdentity(0.0));
  const WishartFactor g = identity_factor(2, 3, 5);
  CHECK(g.nu() == 5);
  CHECK(wishart_block(g, 1, 1).isIdentity(0.0));
  CHECK_THROWS_AS(wishart_block(f, 4, 0), std::out_of_range);
  MatrixXd x(2, 1);
  x << 0.0, 0.3;
  const MatrixXd kz = wishart_prior_kernel(x, 0.5, 4);
  CHECK(kz(0, 0) == doctest::Approx(0.25));
  CHECK(kz(0, 1) == doctest::Approx(0.25 * std::exp(-0.09 / 0.5)));
}

TEST_CASE("Kronecker-with-identity helpers agree with dense products") {
  std::mt19937_64 rng(8);
  const Index n = 4, q = 3;
  const MatrixXd a = randn(n, n, rng);
  MatrixXd l = (a * a.transpose() + MatrixXd::Identity(n, n)).llt().matrixL();
  const MatrixXd v = randn(n * q, 2, rng);
  const MatrixXd dense = kron(l, MatrixXd::Identity(q, q));
  CHECK((kron_identity_apply(l, v, q) - dense * v).norm() < 1e-12);
  CHECK((kron_identity_apply_transpose(l, v, q) - dense.transpose() * v).norm() < 1e-12);
  CHECK((dense * kron_identity_solve_lower(l, v, q) - v).norm() < 1e-12);
  CHECK((dense.transpose() * kron_identity_solve_lower_transpose(l, v, q) - v).norm() < 1e-12);

  const MatrixXd coupling = randn(q, q, rng);
  const MatrixXd k = randn(n, n, rng);
  CHECK((kronecker_kernel(coupling, k) - kron(k, coupling)).norm() < 1e-14);
}

TEST_CASE("prefactor matrix") {
  const MatrixXd p = prefactor_matrix({1.0, 2.0});
  CHECK(p(0, 0) == 1.0);
  CHECK(p(0, 1) == doctest::Approx(std::sqrt(4.0 / 5.0)));
  CHECK(p(1, 0) == p(0, 1));
  CHECK(prefactor_matrix({1.0, 2.0}, 2)(0, 1) == doctest::Approx(4.0 / 5.0));
}

TEST_CASE("2-D block kernel is the product of per-coordinate kernels") {
  MatrixXd x(2, 2);
  x << 0.1, -0.3, 0.5, 0.2;
  const MatrixXd k = gibbs_block_matrix(x, {0.4, 1.1});
  const double k01 = gibbs(x(0, 0), x(1, 0), 0.4, 1.1) * gibbs(x(0, 1), x(1, 1), 0.4, 1.1);
  CHECK(k(0, 3) == doctest::Approx(k01).epsilon(1e-14));
}
