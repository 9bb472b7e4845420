#include "doctest.h"

#include "parahom/cell_problems.hpp"
#include "parahom/coeff_models.hpp"
#include "parahom/effective.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace parahom;

namespace {

const double kPi = 3.14159265358979323846;

// Discrete harmonic mean of node values: in 1D the finite-volume corrector
// carries a constant face flux, so a^eff is exactly 1 / mean(1 / a).
double harmonic_mean(const Eigen::VectorXd& a) { return 1.0 / a.cwiseInverse().mean(); }

DriverPath path_for(const CoefficientModel& model, std::uint64_t seed, double horizon,
                    double start = 0.0) {
  DriverSpec spec = model.driver();
  spec.seed = seed;
  return sample_driver(spec, horizon, start);
}

}  // namespace

TEST_CASE("OU driver has the exact one-step transition law") {
  const CoefficientModel m = make_r1(16);
  const DriverPath p = path_for(m, 42, 2000.0);
  const Eigen::VectorXd x = p.states.col(0);
  const double phi = std::exp(-m.driver().ds);
  const Eigen::Index K = x.size() - 1;
  const Eigen::VectorXd r = x.tail(K) - phi * x.head(K);
  const double rvar = r.squaredNorm() / double(K);
  CHECK(rvar == doctest::Approx(1.0 - phi * phi).epsilon(0.02));
  const double var = (x.array() - x.mean()).square().mean();
  CHECK(std::abs(var - 1.0) < 0.2);
}

TEST_CASE("driver paths are reproducible per seed") {
  const CoefficientModel m = make_r1(16);
  const DriverPath a = path_for(m, 7, 10.0), b = path_for(m, 7, 10.0), c = path_for(m, 8, 10.0);
  CHECK(a.states == b.states);
  CHECK((a.states - c.states).norm() > 1.0);
  CHECK(a.size() == 1001);
  CHECK(a.index_at(0.0149) == 1);
  const DriverPath r = a.reversed();
  CHECK(r.state(0)(0) == a.state(a.size() - 1)(0));
  CHECK(r.start == doctest::Approx(-a.end()));
}

TEST_CASE("model hashes depend on the definition only") {
  CHECK(make_r1(16).hash() == make_r1(16).hash());
  CHECK(make_r1(16).hash() != make_r2(16).hash());
  CHECK(make_r1(16).hash() != make_r1(32).hash());
  CoefficientModel m = make_r1(16);
  const auto h = m.hash();
  m.driver().seed = 99;
  CHECK(m.hash() == h);
  CHECK_THROWS_AS(make_model("nope", 16), std::invalid_argument);
}

TEST_CASE("R1 stays within its certified ellipticity range") {
  const CoefficientModel m = make_r1(16);
  CHECK(m.eig_min() >= 1.0 - 1e-12);
  CHECK(m.eig_max() <= 3.0 + 1e-12);
  const DriverPath p = path_for(m, 3, 20.0);
  for (Eigen::Index k = 0; k < p.size(); k += 97) {
    const Field a = evaluate_a(m, p, k);
    CHECK(a.values().minCoeff() >= m.eig_min() - 1e-12);
    CHECK(a.values().maxCoeff() <= m.eig_max() + 1e-12);
  }
  CHECK(make_r2(16).time_independent());
  CHECK(!m.time_independent());
}

TEST_CASE("OU modulation passes the mixing diagnostic") {
  const CoefficientModel m = make_r1(16);
  const DriverPath p = path_for(m, 5, 50000.0);
  const MixingReport rep = mixing_diagnostic(m, p, 10.0);
  INFO("integrated " << rep.integrated.at(0) << " tail " << rep.tail.at(0));
  CHECK(rep.pass);
  CHECK(rep.exponential_rate.at(0) > 0.5);

  // A correlation time of 50 leaves most of the mass beyond the window.
  DriverSpec slow = m.driver();
  slow.gamma = 0.02;
  slow.sigma = Eigen::MatrixXd::Constant(1, 1, std::sqrt(0.04));
  slow.seed = 6;
  const DriverPath q = sample_driver(slow, 2000.0);
  CHECK(!mixing_diagnostic_series(q.states, q.ds, 10.0).pass);
}

TEST_CASE("elliptic corrector in 1D reproduces the harmonic mean") {
  const CoefficientModel m = make_r2(16);
  const Field a = m.evaluate(Eigen::VectorXd::Zero(1));
  const EllipticResult e = solve_elliptic_corrector(a);
  CHECK(e.aeff(0, 0) == doctest::Approx(harmonic_mean(a.component(0))).epsilon(1e-11));
  CHECK(std::abs(e.aeff(0, 0) - std::sqrt(3.0)) < 1e-7);
  CHECK(std::abs(mean(e.chi)(0)) < 1e-13);
}

TEST_CASE("constant coefficient has a vanishing corrector") {
  const CoefficientModel m = make_constant(Eigen::MatrixXd::Constant(1, 1, 2.0), 16);
  const EllipticResult e = solve_elliptic_corrector(m.base());
  CHECK(e.chi.values().cwiseAbs().maxCoeff() < 1e-12);
  CHECK(e.aeff(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("separable 2D model decouples into 1D harmonic means") {
  const CoefficientModel m = make_separable_2d(16);
  const Field a = m.base();
  const EllipticResult e = solve_elliptic_corrector(a);
  Eigen::VectorXd line(16);
  for (int k = 0; k < 16; ++k) line(k) = 2.0 + std::sin(2 * kPi * k / 16.0);
  const double h = harmonic_mean(line);
  CHECK(e.aeff(0, 0) == doctest::Approx(h).epsilon(1e-10));
  CHECK(e.aeff(1, 1) == doctest::Approx(h).epsilon(1e-10));
  CHECK(std::abs(e.aeff(0, 1)) < 1e-10);
  CHECK(std::abs(e.aeff(1, 0)) < 1e-10);
}

TEST_CASE("parabolic corrector of a static coefficient is the elliptic one") {
  const CoefficientModel m = make_r2(16);
  CorrectorOptions o;
  o.horizon = 1.0;
  const double b = default_burn_in(m, m.driver().ds);
  const DriverPath p = path_for(m, 1, o.horizon + 2 * b + 1.0, -b - 0.5);
  const CorrectorTrajectory chi = solve_parabolic_corrector(m, p, o);
  const EllipticResult e = solve_elliptic_corrector(m.base());
  CHECK((chi.values.back() - e.chi.values()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((chi.flux.array() - e.aeff(0, 0)).abs().maxCoeff() < 1e-9);

  const CorrectorTrajectory rev = solve_reversed_corrector(m, p, o);
  CHECK((rev.values.front() - e.chi.values()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("forward corrector forgets its initial state") {
  const CoefficientModel m = make_r1(16);
  CorrectorOptions o;
  o.start = 0.0;
  o.horizon = 5.0;
  o.retain_stride = 10;
  const double b = default_burn_in(m, m.driver().ds);
  const DriverPath p = path_for(m, 11, o.horizon + b + 1.0, -b - 0.5);
  CHECK(corrector_uniqueness_gap(m, p, o) <= 1e-8);
  const CorrectorTrajectory chi = solve_parabolic_corrector(m, p, o);
  CHECK(chi.max_mean_drift <= 1e-12);
  CHECK(chi.mean_zero);

  CorrectorOptions shallow = o;
  shallow.burn_in = 0.05;
  shallow.verify_uniqueness = true;
  CHECK_THROWS_AS(solve_parabolic_corrector(m, p, shallow), BurnInError);
}

TEST_CASE("initial layer of the Laplacian decays at the discrete eigenrate") {
  const int M = 16;
  const double ds = 0.001;
  const CoefficientModel m = make_constant(Eigen::MatrixXd::Identity(1, 1), M, ds);
  const DriverPath p = path_for(m, 1, 1.0);
  Mat chi0(M, 1);
  for (int k = 0; k < M; ++k) chi0(k, 0) = std::sin(2 * kPi * k / M);
  const InitialLayer il = solve_initial_layer(m, p, chi0, 0.5);
  const double lam = 4.0 * M * M * std::pow(std::sin(kPi / M), 2);
  CHECK(il.nu_hat == doctest::Approx(std::log1p(ds * lam) / ds).epsilon(1e-8));
  CHECK(il.mean_abs.back() < 1e-14);
}

TEST_CASE("frozen and averaged routes match their oracles") {
  const CoefficientModel m = make_r1(16);
  const DriverPath p = path_for(m, 9, 20.0);
  const EffectiveMatrix frozen = frozen_ensemble_aeff(m, p, 10, 20);
  double acc = 0.0;
  int count = 0;
  for (Eigen::Index k = 0; k < p.size() - 1; k += 10, ++count)
    acc += harmonic_mean(evaluate_a(m, p, k).component(0));
  CHECK(frozen.values(0, 0) == doctest::Approx(acc / count).epsilon(1e-10));

  Eigen::VectorXd abar = Eigen::VectorXd::Zero(16);
  for (Eigen::Index k = 0; k < p.size() - 1; ++k) abar += evaluate_a(m, p, k).component(0);
  abar /= double(p.size() - 1);
  CHECK(averaged_coefficient_aeff(m, p).values(0, 0) ==
        doctest::Approx(harmonic_mean(abar)).epsilon(1e-10));
}

TEST_CASE("joint corrector of an unmodulated coefficient is trivial") {
  DriverSpec d;
  d.gamma = 2.0;
  d.sigma = Eigen::MatrixXd::Constant(1, 1, 2.0);
  const CoefficientModel m = make_sinusoidal_1d(16, 2.5, 0.0, Link::Tanh, d);
  const JointCorrector j = solve_joint_corrector_1d(m, 8.0, 64);
  CHECK(j.aeff == doctest::Approx(2.5).epsilon(1e-9));
  CHECK(j.weight.sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(solve_joint_corrector_1d(make_separable_2d(8), 8.0, 32), std::invalid_argument);
}

TEST_CASE("Lambda of an AR(1) flux recovers the long-run variance") {
  // x_k = phi x_{k-1} + e_k with unit stationary variance: the long-run
  // variance per unit s is ds (1 + phi) / (1 - phi).
  const double ds = 0.01, tau = 1.0, phi = std::exp(-ds / tau);
  std::vector<FluctuationSeries> series;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd;
  for (int s = 0; s < 8; ++s) {
    FluctuationSeries f;
    f.ds = ds;
    const Eigen::Index K = 200000;
    f.values.resize(K, 1);
    double x = nd(rng);
    for (Eigen::Index k = 0; k < K; ++k) {
      x = phi * x + std::sqrt(1 - phi * phi) * nd(rng);
      f.values(k, 0) = x;
      f.times.push_back(double(k) * ds);
    }
    series.push_back(std::move(f));
  }
  LambdaOptions o;
  o.correlation_time = tau;
  const LambdaTensor L = estimate_lambda(series, 20.0 * tau, o);
  const double expect = ds * (1 + phi) / (1 - phi);
  CHECK(std::abs(L.values(0, 0) - expect) < 4.0 * L.standard_error(0, 0));
  CHECK(L.standard_error(0, 0) < 0.15 * expect);
  CHECK(L.tail_ok);
}

TEST_CASE("flux time average has the right batch-means error") {
  FluxSeries f;
  f.ds = 0.01;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd(2.0, 0.5);
  const Eigen::Index K = 100000;
  f.values.resize(K, 1);
  for (Eigen::Index k = 0; k < K; ++k) {
    f.values(k, 0) = nd(rng);
    f.times.push_back(double(k) * f.ds);
  }
  const EffectiveMatrix e = estimate_aeff(f);
  const double se = 0.5 / std::sqrt(double(K));
  CHECK(std::abs(e.values(0, 0) - 2.0) < 4.0 * se);
  CHECK(e.standard_error(0, 0) == doctest::Approx(se).epsilon(0.35));

  const EquivalenceReport eq = aeff_equivalence(f, f);
  CHECK(eq.agree);
  CHECK(eq.max_z == doctest::Approx(0.0));
}

TEST_CASE("chi21 integrates the fluctuation") {
  FluctuationSeries p;
  p.ds = 0.1;
  p.values = Mat::Constant(10, 1, 0.5);
  for (int k = 0; k < 10; ++k) p.times.push_back(0.1 * k);
  const Mat c = chi21_cumulative(p);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(c.rows() - 1, 0) == doctest::Approx(0.5));

  FluxSeries f;
  f.ds = 0.1;
  f.values = Mat::Constant(10, 1, 3.0);
  f.times = p.times;
  const FluctuationSeries psi = compute_psi21(f, Mat::Constant(1, 1, 2.0));
  CHECK((psi.values.array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("mu vanishes under reflection symmetry and not otherwise") {
  const Field r2 = make_r2(16).base();
  const MuTensor sym = mu_elliptic(r2, solve_elliptic_corrector(r2).aeff);
  CHECK(std::abs(sym.values(0)) < 1e-12);

  const CoefficientModel asym = make_asymmetric(16);
  const Mat aeff = solve_elliptic_corrector(asym.base()).aeff;
  const MuTensor mu = mu_elliptic(asym.base(), aeff);
  CHECK(std::abs(mu.values(0)) > 1e-4);

  // The time-marched route agrees with the elliptic one for a static coefficient.
  const DriverPath p = path_for(asym, 1, 32.0, -21.0);
  const MuTensor streamed = estimate_mu_streaming(asym, p, aeff, 10.0, 10.0, 10.0, 10);
  CHECK(streamed.values(0) == doctest::Approx(mu.values(0)).epsilon(1e-6));
}
