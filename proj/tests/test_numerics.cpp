#include "doctest.h"

#include "parahom/flux_operator.hpp"
#include "parahom/torus.hpp"
#include "parahom/tridiagonal.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace parahom;

namespace {

const double kPi = 3.14159265358979323846;

Field scalar_field(const TorusGrid& g, double (*fn)(const Eigen::VectorXd&)) {
  return Field::sample(g, FieldRank::Scalar, [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd v(1);
    v(0) = fn(z);
    return v;
  });
}

Field isotropic(const TorusGrid& g, double (*fn)(const Eigen::VectorXd&)) {
  const int n = g.dimension();
  return Field::sample(g, FieldRank::Matrix, [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n * n);
    for (int i = 0; i < n; ++i) v(i * n + i) = fn(z);
    return v;
  });
}

double sin1(const Eigen::VectorXd& z) { return std::sin(2 * kPi * z(0)); }
double cos1(const Eigen::VectorXd& z) { return std::cos(2 * kPi * z(0)); }
double coef1(const Eigen::VectorXd& z) { return 2.0 + std::sin(2 * kPi * z(0)); }
double coef2(const Eigen::VectorXd& z) {
  return 2.0 + std::sin(2 * kPi * z(0)) * std::cos(2 * kPi * z(1));
}
double one(const Eigen::VectorXd&) { return 1.0; }
double sinsin(const Eigen::VectorXd& z) {
  return std::sin(2 * kPi * z(0)) * std::sin(2 * kPi * z(1));
}

Eigen::VectorXd random_vector(Eigen::Index n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(n);
  for (Eigen::Index k = 0; k < n; ++k) v(k) = nd(rng);
  return v;
}

}  // namespace

TEST_CASE("grid indexing wraps around") {
  TorusGrid g(2, 8);
  CHECK(g.size() == 64);
  CHECK(g.neighbor(7, 0, 1) == 0);
  CHECK(g.neighbor(0, 0, -1) == 7);
  CHECK(g.neighbor(0, 1, -1) == 56);
  CHECK(g.point(9)(0) == doctest::Approx(0.125));
  CHECK(g.point(9)(1) == doctest::Approx(0.125));
  CHECK_THROWS_AS(TorusGrid(3, 8), std::invalid_argument);
  CHECK_THROWS_AS(TorusGrid(1, 7), std::invalid_argument);
}

TEST_CASE("spectral gradient is exact on trigonometric data") {
  TorusGrid g(1, 16);
  const Field f = scalar_field(g, sin1);
  const Field df = gradient(f);
  const Field c = scalar_field(g, cos1);
  CHECK((df.values() - 2 * kPi * c.values()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("central differences converge at second order") {
  double err[2];
  for (int r = 0; r < 2; ++r) {
    TorusGrid g(1, 32 << r);
    const Field df = gradient(scalar_field(g, sin1), DiffScheme::CentralDifference);
    err[r] = (df.values() - 2 * kPi * scalar_field(g, cos1).values()).cwiseAbs().maxCoeff();
  }
  CHECK(std::log2(err[0] / err[1]) == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("divergence of the gradient is the Laplacian in 2D") {
  TorusGrid g(2, 16);
  const Field f = scalar_field(g, sinsin);
  const Field lap = divergence(gradient(f));
  CHECK((lap.values() + 8 * kPi * kPi * f.values()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(std::abs(mean(lap)(0)) < 1e-12);
  CHECK(l2_norm(f)(0) == doctest::Approx(0.5));
}

TEST_CASE("tridiagonal solver matches a dense solve") {
  const int n = 9;
  const Eigen::VectorXd diag = 4.0 + random_vector(n, 3).array().abs();
  const Eigen::VectorXd off = random_vector(n, 4);
  const Eigen::VectorXd rhs = random_vector(n, 5);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) A(k, k) = diag(k);
  for (int k = 0; k + 1 < n; ++k) A(k, k + 1) = A(k + 1, k) = off(k);
  Tridiagonal<double> tri;
  tri.factor(diag, off.head(n - 1));
  Eigen::VectorXd x = rhs;
  tri.solve_in_place(x);
  CHECK((x - A.lu().solve(rhs)).norm() < 1e-12);

  A(0, n - 1) = A(n - 1, 0) = off(n - 1);
  CyclicTridiagonal<double> cyc;
  cyc.factor(diag, off);
  x = rhs;
  cyc.solve_in_place(x);
  CHECK((x - A.lu().solve(rhs)).norm() < 1e-12);
}

TEST_CASE("flux operator is symmetric, conservative and dissipative") {
  for (int dim = 1; dim <= 2; ++dim) {
    TorusGrid g(dim, 12);
    const Field a = isotropic(g, dim == 1 ? coef1 : coef2);
    FluxOperator<double> op(a);
    const Eigen::MatrixXd L = Eigen::MatrixXd(op.sparse_matrix());
    CHECK((L - L.transpose()).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::VectorXd u = random_vector(g.size(), 11 + dim);
    const Eigen::VectorXd Lu = op.apply(u);
    CHECK((Lu - L * u).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(std::abs(Lu.sum()) < 1e-9);
    CHECK(u.dot(Lu) < 0.0);
    CHECK(op.apply(Eigen::VectorXd::Ones(g.size())).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("constant coefficient spectrum is the discrete Laplacian") {
  const int M = 16;
  TorusGrid g(1, M);
  const Field a = isotropic(g, one);
  FluxOperator<double> op(a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-Eigen::MatrixXd(op.sparse_matrix()));
  Eigen::VectorXd expect(M);
  for (int k = 0; k < M; ++k) expect(k) = 4.0 * M * M * std::pow(std::sin(kPi * k / M), 2);
  std::sort(expect.data(), expect.data() + M);
  CHECK((es.eigenvalues() - expect).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(op.unit_forcing(0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("implicit step solves (I - ds L) x = b") {
  for (int dim = 1; dim <= 2; ++dim) {
    TorusGrid g(dim, 10);
    const Field a = isotropic(g, dim == 1 ? coef1 : coef2);
    FluxOperator<double> op(a);
    const double ds = 0.01;
    op.factor_implicit(ds);
    const Eigen::VectorXd b = random_vector(g.size(), 21 + dim);
    Eigen::VectorXd x = b;
    op.solve_implicit(x);
    CHECK((x - ds * op.apply(x) - b).norm() < 1e-10 * b.norm());
  }
}

TEST_CASE("operator rejects a coefficient outside the ellipticity range") {
  TorusGrid g(1, 8);
  const Field a(g, FieldRank::Matrix);
  CHECK_THROWS(FluxOperator<double>(a));
}
