#ifndef PARAHOM_HARNESS_EXPERIMENTS_HPP
#define PARAHOM_HARNESS_EXPERIMENTS_HPP

// End-to-end experiments behind the CLI subcommands and the acceptance
// suite. Each run returns a report with a JSON form and CSV tables; the
// numbers come with Monte Carlo standard errors or a solver provenance.

#include "parahom/effective.hpp"
#include "parahom/harness/config.hpp"
#include "parahom/harness/io.hpp"
#include "parahom/pde.hpp"

#include <atomic>
#include <exception>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <thread>
#include <vector>

namespace parahom::harness {

/// f(0), ..., f(n - 1) on up to `workers` threads, results in index order.
/// The first exception (by index) is rethrown after all workers stop.
template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, int workers, F&& f) {
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i; !failed && (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = f(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t k = std::min<std::size_t>(std::max(workers, 1), std::max<std::size_t>(n, 1));
  if (k <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Progress sink; null discards.
struct Log {
  std::ostream* os = nullptr;
  void operator()(const std::string& line) const;
};

/// Marches the forward corrector over [start - burn_in, start + horizon] with
/// nothing stored and hands each flux row of the window to `row(s, F)`.
void stream_flux(const CoefficientModel& model, const DriverPath& path, double start, double burn_in,
                 double horizon, const std::function<void(double, const Vec&)>& row);

/// Driver path for `seed` covering [-before, after] on the ds grid.
DriverPath driver_path(const CoefficientModel& model, std::uint64_t seed, double before, double after);

struct TensorEstimate {
  std::string model;
  bool time_independent = false;
  Mat aeff, aeff_se;
  std::vector<double> aeff_per_seed;  // entry (0, 0) of each seed mean
  LambdaTensor lambda;
  MuTensor mu;
  std::string aeff_seeds, lambda_seeds, mu_seeds;
  double seconds = 0.0;

  json to_json() const;
};

/// a^eff, Lambda and mu from the estimation seed sets of the config. For a
/// time-independent model Lambda is zero and mu comes from the elliptic
/// correctors.
TensorEstimate estimate_tensors(const CoefficientModel& model, const ExperimentConfig& cfg, int workers,
                                const Log& log = {});

struct RouteEstimate {
  std::string route;
  std::string regime;  // alpha relation of the time scale
  Mat values, standard_error;
  double horizon = 0.0;
  std::string provenance;
};

struct EffectiveReport {
  std::string model;
  std::vector<RouteEstimate> routes;
  EquivalenceReport equivalence;
  double factor = 3.0;
  bool equivalent = false;
  double seconds = 0.0;

  const RouteEstimate& route(const std::string& name) const;
  json to_json() const;
  CsvTable table() const;
};

EffectiveReport run_effective(const CoefficientModel& model, const ExperimentConfig& cfg,
                              const Log& log = {});

struct CltReport {
  std::string model;
  double eps = 0.0, T = 0.0;
  std::vector<double> checkpoints;
  std::size_t seeds = 0;
  int n = 1;
  Mat samples;  // seeds x (checkpoint * n^2 + entry)
  Mat lambda;
  struct Entry {
    double t = 0;
    int entry = 0;
    double mean = 0, mean_z = 0, variance = 0, variance_se = 0, predicted = 0;
    double ratio = 0, ratio_se = 0, skew = 0, skew_z = 0, kurtosis = 0, kurtosis_z = 0;
  };
  std::vector<Entry> entries;
  /// Per diagonal entry: sample covariance across checkpoints vs min(t, t') Lambda.
  std::vector<Mat> checkpoint_covariance, predicted_covariance;
  double min_covariance_eigenvalue = 0.0;
  bool degenerate = false;  // Lambda = 0 and the samples vanish identically
  bool pass = false;
  double band_lo = 0.8, band_hi = 1.2, skew_limit = 3.0;
  double seconds = 0.0;

  json to_json() const;
  CsvTable table() const;
};

CltReport run_clt(const CoefficientModel& model, const TensorEstimate& tensors, const ExperimentConfig& cfg,
                  int workers, const Log& log = {});

/// Test functionals phi(x) = He_k((x - c) / w) exp(-(x - c)^2 / (2 w^2)).
struct TestFunctional {
  double centre = 0.0, width = 1.0;
  int hermite = 0;

  double operator()(double x) const;
  std::string label() const;
};
std::vector<TestFunctional> test_functionals(const ExperimentConfig& cfg);

/// int_0^T (int_s^T c(t) dt)^2 ds Lambda with c(t) = <d^2 u0(t), phi>, and
/// the Xi_{0,2} mean int_0^T <t mu d^3 u0(t), phi> dt.
struct U0Prediction {
  Vec mean, variance;
};
U0Prediction predict_u0_moments(double aeff, double mu, double lambda, const InitialData& g,
                                double half_width, double T, const std::vector<TestFunctional>& phi);

struct Theorem2Report {
  std::string model;
  double T = 0.0;
  std::vector<double> eps;
  std::vector<std::size_t> seed_counts;
  std::vector<TestFunctional> functionals;
  double aeff = 0, mu = 0, lambda = 0;
  struct PerEps {
    double eps = 0;
    std::size_t seeds = 0;
    Mat proj;  // seeds x functionals
    Vec mean, mean_se, variance, variance_se, gap, gap_se, mean_z, ks, ks_p;
    // Seed-averaged diagnostics over the first `diagnostic_seeds` seeds.
    std::size_t diagnostic_seeds = 0;
    double xi1 = 0, xi1_se = 0, v_remainder = 0, v_scaled = 0, chi21_term = 0, xi2_gap = 0, xi02 = 0;
    double U_norm = 0, u_minus_u0 = 0, u_minus_corrected = 0;
    double mass_defect = 0, max_principle_excess = 0, boundary_mass = 0;
    double seconds = 0;
  };
  std::vector<PerEps> per_eps;
  struct Reference {
    std::size_t seeds = 0;
    double dt = 0;
    Eigen::Index points = 0;
    Mat proj;
    Vec mean, mean_se, variance, variance_se;
    U0Prediction closed_form;
  } u0;
  double gap_limit = 0.3, z_limit = 3.0;
  bool variance_decreasing = false, variance_small = false, mean_ok = false, xi1_decreasing = false;
  bool degenerate = false;  // Lambda = 0: U0 deterministic
  double seconds = 0.0;

  json to_json() const;
  CsvTable table() const;
  CsvTable samples_table() const;
};

/// U^eps ensembles per eps against the U0 ensemble. Refuses eps that the
/// model resolution cannot resolve (ResolutionError).
Theorem2Report run_theorem2(const CoefficientModel& model, const TensorEstimate& tensors,
                            const ExperimentConfig& cfg, int workers, const Log& log = {});

struct RatesReport {
  std::string model;
  std::vector<double> eps;
  std::vector<std::uint64_t> seeds;
  Mat plain, corrected;  // seeds x eps
  double slope = 0, slope_lo = 0, slope_hi = 0, slope_se = 0;
  double corrected_slope = 0, corrected_slope_se = 0;
  bool corrector_helps = false;
  double target = 1.0, tol = 0.15;
  bool pass = false;
  double aeff = 0;
  double seconds = 0.0;

  json to_json() const;
  CsvTable table() const;
};

RatesReport run_rates(const CoefficientModel& model, const TensorEstimate& tensors, const ExperimentConfig& cfg,
                      int workers, const Log& log = {});

struct SpdeRateReport {
  std::vector<double> dt;
  std::size_t seeds = 0;
  double reference_dt = 0;
  Vec error, error_se;            // space-time strong error per dt
  Vec grid_error, grid_error_se;  // error at the coarse grid times only
  Vec halving_rate;               // log2 of successive error ratios
  double rate = 0, rate_se = 0, grid_rate = 0;
  double target = 0.5, tol = 0.1;
  bool pass = false;
  double seconds = 0.0;

  json to_json() const;
  CsvTable table() const;
};

/// Strong error of the semi-implicit scheme against the exact
/// representation on shared Wiener paths, in L2(Omega; L2(0, T; L2)) with the
/// scheme interpolated linearly in time onto a reference grid.
SpdeRateReport run_spde_rate(const TensorEstimate& tensors, const ExperimentConfig& cfg, int workers,
                             const Log& log = {});

struct CorrectorChecks {
  double uniqueness_gap = 0.0;
  double max_mean_drift = 0.0;
  std::size_t paths = 0;
  bool pass = false;
};
CorrectorChecks run_corrector_checks(const CoefficientModel& model, const ExperimentConfig& cfg);

struct InitialLayerChecks {
  double r1_rate = 0.0;
  double eigen_rate = 0.0, eigen_target = 0.0, eigen_rel_error = 0.0;
  bool pass = false;
};
InitialLayerChecks run_initial_layer_checks(const CoefficientModel& model, const ExperimentConfig& cfg);

struct JointCheck {
  double gamma = 0, ds = 0, horizon = 0;
  int ny = 0;
  double joint = 0, joint_residual = 0, outside_mass = 0;
  double ergodic = 0, ergodic_se = 0;
  double z = 0;
  bool pass = false;
};
JointCheck run_joint_check(const ExperimentConfig& cfg);

struct DegenerateCheck {
  std::string model;
  double mu = 0, aeff = 0, relative_l2 = 0, xi02_norm = 0;
  bool pass = false;
};
DegenerateCheck run_degenerate_check(const ExperimentConfig& cfg);

/// Corrector history on one seed: JSON summary, flux CSV and binary values.
json run_corrector_dump(const CoefficientModel& model, const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace parahom::harness

#endif  // PARAHOM_HARNESS_EXPERIMENTS_HPP
