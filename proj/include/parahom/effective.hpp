#ifndef PARAHOM_EFFECTIVE_HPP
#define PARAHOM_EFFECTIVE_HPP

// Homogenised and limit tensors: a^eff by several routes, the flux
// fluctuation Psi_{2,1}, its long-run covariance Lambda, and the drift
// tensor mu. Matrices are flattened row-major (i*n + j), 3-tensors as
// (i*n + j)*n + k, Lambda as (n^2 x n^2) with rows (ij) and columns (kl).

#include "parahom/cell_problems.hpp"
#include "parahom/coeff_models.hpp"
#include "parahom/stats.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace parahom {

class NonStationarityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AeffRoute { ParabolicAverage, Reversed, EllipticFrozen, AveragedCoefficient, JointCorrector };
std::string route_name(AeffRoute r);

struct EffectiveMatrix {
  AeffRoute route = AeffRoute::ParabolicAverage;
  Mat values;
  Mat standard_error;
  double horizon = 0.0;
  double asymmetry = 0.0;
  bool asymmetry_flagged = false;
};

/// Spatially integrated flux F(s) = int a (I + grad chi) dz per interval.
struct FluxSeries {
  int n = 1;
  double ds = 0.0;
  /// Driver correlation time, used for the minimum-horizon check (0: none).
  double correlation_time = 0.0;
  std::vector<double> times;
  Mat values;  // (intervals x n^2)

  double horizon() const { return double(values.rows()) * ds; }
  Eigen::Index size() const { return values.rows(); }
};

FluxSeries flux_series(const CoefficientModel& model, const CorrectorTrajectory& chi);

struct AeffOptions {
  /// Minimum horizon in driver correlation times (ignored for time-independent series).
  double min_correlation_times = 1e3;
  Eigen::Index batches = 50;
  /// Half-versus-half z threshold for the running-mean Cauchy check.
  double cauchy_z = 4.5;
};

/// Time average with batch-means errors; symmetrised output.
EffectiveMatrix estimate_aeff(const FluxSeries& series, const AeffOptions& opts = {});

struct EquivalenceReport {
  EffectiveMatrix forward, reversed;
  Mat difference;
  Mat combined_se;  // sqrt(se_f^2 + se_r^2)
  double max_z = 0.0;
  double factor = 3.0;
  bool agree = false;
};

/// Forward and reversed routes on the same path; agreement within
/// `factor` combined standard errors. Throws if they disagree and `strict`.
EquivalenceReport aeff_equivalence(const FluxSeries& forward, const FluxSeries& reversed,
                                   const AeffOptions& opts = {}, double factor = 3.0,
                                   bool strict = false);

struct FluctuationSeries {
  int n = 1;
  double ds = 0.0;
  std::vector<double> times;
  Mat values;  // Psi_{2,1} per interval, (intervals x n^2)
  bool zero_mean_adjusted = true;

  Eigen::Index size() const { return values.rows(); }
};

FluctuationSeries compute_psi21(const FluxSeries& flux, const Mat& aeff);

/// chi_{2,1}(s) = int_0^s Psi_{2,1}: cumulative trapezoid over the series
/// times, extended to the end of the last interval. Row r is chi_{2,1} at
/// times[r] (row 0 is zero); the final row is the end of the last interval.
Mat chi21_cumulative(const FluctuationSeries& psi);

struct LambdaOptions {
  /// Driver correlation time for the max_lag precondition (0: skip).
  double correlation_time = 0.0;
  double min_lag_correlation_times = 20.0;
  double min_horizon_lags = 50.0;
  double tail_factor = 3.0;
  bool strict_tail = true;
  /// Flag PSD clipping larger than this many standard errors.
  double clip_flag_se = 3.0;
};

struct LambdaTensor {
  Mat values;  // PSD-projected, (n^2 x n^2)
  Mat raw;     // before projection
  Mat sqrt;
  Mat standard_error;
  double max_lag = 0.0;
  double clipped = 0.0;
  bool clip_flagged = false;
  double tail = 0.0;        // largest |C_sym(max_lag)| over diagonal entries
  double noise_floor = 0.0;
  bool tail_ok = true;
  Eigen::Index samples = 0;
};

/// Trapezoidal integral of the symmetrised autocovariance up to max_lag,
/// pooled over independent series.
LambdaTensor estimate_lambda(const std::vector<FluctuationSeries>& series, double max_lag,
                             const LambdaOptions& opts = {});
LambdaTensor estimate_lambda(const FluctuationSeries& series, double max_lag,
                             const LambdaOptions& opts = {});

struct MuTensor {
  int n = 1;
  Vec values;  // n^3
  Vec standard_error;
  double horizon = 0.0;
};

/// Ergodic average of the mu integrand over a stored chi / chi_{2,2} pair
/// (both retaining every step on the same path).
MuTensor compute_mu(const CoefficientModel& model, const DriverPath& path,
                    const CorrectorTrajectory& chi, const Chi22Trajectory& chi22, const Mat& aeff,
                    Eigen::Index batches = 50);

/// Streaming version: chi is marched from -(b1 + b2), chi_{2,2} from -b2, the
/// integrand is averaged over [0, horizon]. Nothing is stored.
MuTensor estimate_mu_streaming(const CoefficientModel& model, const DriverPath& path,
                               const Mat& aeff, double burn_chi, double burn_chi22, double horizon,
                               Eigen::Index batches = 50);

/// Time-independent model: mu from elliptic chi and chi_{2,2}.
MuTensor mu_elliptic(const Field& a, const Mat& aeff);

/// a_-^eff: ensemble average of the frozen-s elliptic a^eff over path samples.
EffectiveMatrix frozen_ensemble_aeff(const CoefficientModel& model, const DriverPath& path,
                                     Eigen::Index stride, Eigen::Index batches = 20);

/// a_+^eff from the time-averaged coefficient.
EffectiveMatrix averaged_coefficient_aeff(const CoefficientModel& model, const DriverPath& path);

}  // namespace parahom

#endif  // PARAHOM_EFFECTIVE_HPP
