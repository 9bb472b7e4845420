#include "doctest.h"

#include "parahom/coeff_models.hpp"
#include "parahom/pde.hpp"
#include "parahom/stats.hpp"

#include <Eigen/Dense>

#include <cmath>

using namespace parahom;

namespace {

DriverPath path_for(const CoefficientModel& model, std::uint64_t seed, double horizon) {
  DriverSpec spec = model.driver();
  spec.seed = seed;
  return sample_driver(spec, horizon, 0.0);
}

}  // namespace

TEST_CASE("Hermite polynomials") {
  CHECK(hermite(0, 0.7) == 1.0);
  CHECK(hermite(1, 0.7) == doctest::Approx(0.7));
  CHECK(hermite(2, 0.7) == doctest::Approx(0.49 - 1.0));
  CHECK(hermite(3, 0.7) == doctest::Approx(0.343 - 2.1));
  CHECK(hermite(4, 1.5) == doctest::Approx(std::pow(1.5, 4) - 6 * 2.25 + 3));
}

TEST_CASE("Gaussian heat kernel derivatives and the heat equation") {
  const GaussianBump g{1.3, 0.4, 0.8};
  const double a = 1.7, x = 0.9, t = 0.3, h = 1e-4;
  for (int k = 0; k < 4; ++k) {
    const double fd = (heat_gaussian(g, a, x + h, t, k) - heat_gaussian(g, a, x - h, t, k)) / (2 * h);
    CHECK(heat_gaussian(g, a, x, t, k + 1) == doctest::Approx(fd).epsilon(1e-6));
  }
  const double dt = (heat_gaussian(g, a, x, t + h, 0) - heat_gaussian(g, a, x, t - h, 0)) / (2 * h);
  CHECK(dt == doctest::Approx(a * heat_gaussian(g, a, x, t, 2)).epsilon(1e-6));
  CHECK(heat_gaussian(g, a, 0.4, 0.0, 0) == doctest::Approx(1.3));
}

TEST_CASE("closed-form and Fourier profiles agree") {
  const SpatialDomain d = SpatialDomain::spectral(12.0, 512);
  const InitialData gauss = InitialData::gaussian(1.0, 0.5, 1.0);
  const InitialData generic([](double x, int order) {
    return heat_gaussian(GaussianBump{1.0, 0.5, 1.0}, 1.0, x, 0.0, order);
  });
  CHECK(gauss.is_gaussian());
  CHECK(!generic.is_gaussian());
  const Mat a = HomogenizedProfile(1.9, gauss, d).evaluate(0.4, 3);
  const Mat b = HomogenizedProfile(1.9, generic, d).evaluate(0.4, 3);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fine domain guards the cell resolution") {
  CHECK_THROWS_AS(SpatialDomain::fine(8.0, 0.1, 8), ResolutionError);
  CHECK_THROWS_AS(SpatialDomain::fine(8.0, 0.3, 16), std::invalid_argument);
  const SpatialDomain d = SpatialDomain::fine(8.0, 0.1, 16);
  CHECK(d.spacing() == doctest::Approx(0.1 / 16));
  CHECK(d.points() == d.intervals + 1);

  const CoefficientModel m = make_r1(8);
  const DriverPath p = path_for(m, 1, 30.0);
  SpatialDomain coarse = d;
  coarse.intervals /= 2;
  CHECK_THROWS_AS(solve_u_eps(m, p, 0.1, InitialData(), coarse, 0.1), ResolutionError);
}

TEST_CASE("fine solver reproduces the heat equation for a constant coefficient") {
  const CoefficientModel m = make_constant(Eigen::MatrixXd::Constant(1, 1, 2.0), 16);
  const InitialData g = InitialData::gaussian(1.0, 0.0, 1.0);
  double err[2];
  const double eps[2] = {0.2, 0.1};
  const double T = 0.25;
  for (int r = 0; r < 2; ++r) {
    const DriverPath p = path_for(m, 1, T / (eps[r] * eps[r]) + 1.0);
    const SpatialDomain d = SpatialDomain::fine(12.0, eps[r], 16);
    FineCoupling c;
    c.aeff = 2.0;
    const FineResult f = solve_fine(m, p, eps[r], g, d, T, c, FineOptions{});
    err[r] = f.u_minus_u0;
    CHECK(f.mass_defect < 1e-8);
    CHECK(f.max_principle_excess <= 1e-14);
    CHECK(f.energy_increase <= 1e-14);
  }
  CHECK(err[0] < 1e-3);
  CHECK(std::log2(err[0] / err[1]) == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("oscillating fine solution conserves mass and respects the maximum principle") {
  const CoefficientModel m = make_r1(16);
  const double eps = 0.2, T = 0.2;
  const DriverPath p = path_for(m, 4, T / (eps * eps) + 1.0);
  FineCoupling c;
  c.aeff = 1.9;
  const FineResult f =
      solve_fine(m, p, eps, InitialData(), SpatialDomain::fine(12.0, eps, 16), T, c, FineOptions{});
  CHECK(f.mass_defect < 1e-8);
  CHECK(f.max_principle_excess <= 1e-14);
  CHECK(f.u.finite());
}

TEST_CASE("solution reaching the truncated boundary is rejected") {
  const CoefficientModel m = make_constant(Eigen::MatrixXd::Constant(1, 1, 2.0), 16);
  const double eps = 0.2, T = 1.0;
  const DriverPath p = path_for(m, 1, T / (eps * eps) + 1.0);
  CHECK_THROWS_AS(solve_u_eps(m, p, eps, InitialData(), SpatialDomain::fine(2.0, eps, 16), T),
                  BoundaryContaminationError);
}

TEST_CASE("Xi02 time stepping converges to its Duhamel integral") {
  const SpatialDomain d = SpatialDomain::spectral(12.0, 256);
  const InitialData g = InitialData::gaussian(1.0, 0.0, 1.0);
  const double aeff = 1.9, mu = 0.3, T = 0.5;
  const SolutionField exact = xi02_duhamel(aeff, mu, g, d, {T});
  // For a Gaussian the drift integral has the closed form t mu d^3 u0(t).
  const Mat prof = HomogenizedProfile(aeff, g, d).evaluate(T, 3);
  CHECK((exact.values.col(0) - T * mu * prof.col(3)).cwiseAbs().maxCoeff() < 1e-10);

  double err[2];
  const double dts[2] = {0.01, 0.005};
  for (int r = 0; r < 2; ++r) {
    const SolutionField x = solve_xi02(aeff, mu, g, d, T, dts[r]);
    err[r] = (x.values.col(x.samples() - 1) - exact.values.col(0)).cwiseAbs().maxCoeff();
  }
  CHECK(std::log2(err[0] / err[1]) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("SPDE without noise is the Xi02 problem") {
  const SpatialDomain d = SpatialDomain::spectral(12.0, 128);
  const InitialData g = InitialData::gaussian(1.0, 0.0, 1.0);
  const WienerPath w = sample_wiener(1, 0.5, 0.01, 3);
  SpectralOptions o;
  o.stride = 1;
  const SPDEPath s = solve_spde(1.9, 0.3, Mat::Zero(1, 1), g, d, 0.5, w, o);
  const SolutionField x = solve_xi02(1.9, 0.3, g, d, 0.5, 0.01, o);
  CHECK((s.U.values - x.values).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("Wiener increments aggregate and reproduce") {
  const WienerPath w = sample_wiener(1, 1.0, 0.001, 17);
  CHECK(w.steps() == 1000);
  CHECK(w.increments == sample_wiener(1, 1.0, 0.001, 17).increments);
  const WienerPath c = w.aggregate(10);
  CHECK(c.steps() == 100);
  CHECK(c.dt == doctest::Approx(0.01));
  CHECK(c.value(100)(0) == doctest::Approx(w.value(1000)(0)).epsilon(1e-12));
  const Moments mo = moments(w.increments.col(0) / std::sqrt(w.dt));
  CHECK(std::abs(mo.mean) < 0.15);
  CHECK(mo.variance == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("SPDE scheme converges to the exact solution at grid points") {
  const SpatialDomain d = SpatialDomain::spectral(12.0, 128);
  const InitialData g = InitialData::gaussian(1.0, 0.0, 1.0);
  const Mat ls = Mat::Constant(1, 1, 0.1);
  const WienerPath fine = sample_wiener(1, 0.5, 0.0005, 8);
  const SolutionField ex = spde_exact(1.9, 0.2, ls, g, d, fine, {fine.steps()});
  double err[2];
  const Eigen::Index f[2] = {40, 20};
  for (int r = 0; r < 2; ++r) {
    const SPDEPath s = solve_spde(1.9, 0.2, ls, g, d, 0.5, fine.aggregate(f[r]));
    err[r] = (s.U.values.col(s.U.samples() - 1) - ex.values.col(0)).norm();
  }
  CHECK(err[1] < err[0]);
}
