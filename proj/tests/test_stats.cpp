#include "doctest.h"

#include "parahom/stats.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace parahom;

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

}  // namespace

TEST_CASE("FFT autocovariance equals the direct lag sums") {
  const Eigen::MatrixXd x = gaussian_matrix(300, 2, 1);
  const auto C = autocovariance(x, 5, false);
  REQUIRE(C.size() == 6);
  for (int k = 0; k <= 5; ++k) {
    Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(2, 2);
    for (Eigen::Index t = 0; t + k < x.rows(); ++t)
      direct += x.row(t).transpose() * x.row(t + k);
    direct /= double(x.rows() - k);
    CHECK((C[k] - direct).cwiseAbs().maxCoeff() < 1e-12);
  }
  const auto D = autocovariance(x.array() + 5.0, 0, true);
  CHECK(D[0](0, 0) ==
        doctest::Approx((x.col(0).array() - x.col(0).mean()).square().mean()).epsilon(1e-10));
}

TEST_CASE("batch means accumulate and continue") {
  const Eigen::MatrixXd x = gaussian_matrix(1000, 1, 2);
  BatchMeans all(1, 50), first(1, 50), second(1, 50);
  for (Eigen::Index t = 0; t < 1000; ++t) {
    all.push(x.row(t).transpose());
    (t < 500 ? first : second).push(x.row(t).transpose());
  }
  CHECK(all.batches() == 20);
  CHECK(all.mean()(0) == doctest::Approx(x.mean()).epsilon(1e-12));
  first.merge(second);
  CHECK(first.count() == 1000);
  CHECK(first.mean()(0) == doctest::Approx(all.mean()(0)).epsilon(1e-12));
  CHECK(first.standard_error()(0) == doctest::Approx(all.standard_error()(0)).epsilon(1e-12));
  CHECK(all.standard_error()(0) == doctest::Approx(1.0 / std::sqrt(1000.0)).epsilon(0.4));
}

TEST_CASE("moments of a normal sample") {
  const Eigen::VectorXd x = gaussian_matrix(20000, 1, 3).col(0) * 2.0 + Eigen::VectorXd::Constant(20000, 1.0);
  const Moments m = moments(x);
  CHECK(std::abs(m.mean - 1.0) < 4 * m.mean_se());
  CHECK(std::abs(m.variance - 4.0) < 4 * m.variance_se());
  CHECK(std::abs(m.skew_z()) < 4.0);
  CHECK(std::abs(m.kurtosis_z()) < 4.0);
  CHECK(m.mean_se() == doctest::Approx(2.0 / std::sqrt(20000.0)).epsilon(0.05));

  const Eigen::MatrixXd s = gaussian_matrix(5000, 2, 4);
  const Eigen::MatrixXd c = sample_covariance(s);
  CHECK((c - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 0.08);
}

TEST_CASE("Kolmogorov-Smirnov test") {
  CHECK(kolmogorov_tail(1.3581) == doctest::Approx(0.05).epsilon(0.01));
  CHECK(kolmogorov_tail(0.0) == doctest::Approx(1.0));
  const Eigen::MatrixXd a = gaussian_matrix(2000, 2, 5);
  std::vector<double> x(a.col(0).data(), a.col(0).data() + 2000);
  std::vector<double> y(a.col(1).data(), a.col(1).data() + 2000);
  CHECK(ks_two_sample(x, x).statistic == 0.0);
  CHECK(ks_two_sample(x, y).p_value > 1e-3);
  for (double& v : y) v += 0.5;
  CHECK(ks_two_sample(x, y).p_value < 1e-6);
}

TEST_CASE("linear fit recovers an exact line") {
  Eigen::VectorXd x(4), y(4);
  x << 1, 2, 3, 4;
  y = 3.0 - 0.5 * x.array();
  const LinearFit f = linear_fit(x, y);
  CHECK(f.slope == doctest::Approx(-0.5));
  CHECK(f.intercept == doctest::Approx(3.0));
  CHECK(f.slope_se < 1e-12);
}

TEST_CASE("PSD projection and square root") {
  Eigen::MatrixXd A(2, 2);
  A << 1, 0, 0, -1;
  double clipped = 0;
  const Eigen::MatrixXd P = psd_project(A, &clipped);
  CHECK(P(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(P(1, 1)) < 1e-15);
  CHECK(clipped == doctest::Approx(-1.0));

  const Eigen::MatrixXd G = gaussian_matrix(3, 3, 6);
  const Eigen::MatrixXd S = G * G.transpose();
  const Eigen::MatrixXd R = psd_sqrt(S);
  CHECK((R * R - S).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((R - R.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normal CDF") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(normal_cdf(1.959964) == doctest::Approx(0.975).epsilon(1e-6));
  CHECK(normal_cdf(-1.0) == doctest::Approx(1.0 - normal_cdf(1.0)));
}
