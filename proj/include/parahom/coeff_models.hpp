#ifndef PARAHOM_COEFF_MODELS_HPP
#define PARAHOM_COEFF_MODELS_HPP

// Random coefficients a(z, s) = a0(z) + sum_k g_k(xi_s) a_k(z) driven by a
// stationary diffusion xi_s in R^N.

#include "parahom/torus.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace parahom {

enum class DriverKind { OrnsteinUhlenbeck, Bistable };

/// dxi = b(xi) ds + sigma dW with b(y) = -gamma y (OU) or
/// b(y) = theta (1 - |y|^2) y (bistable).
struct DriverSpec {
  DriverKind kind = DriverKind::OrnsteinUhlenbeck;
  int dimension = 1;
  double gamma = 1.0;
  double theta = 1.0;
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(1, 1);
  double ds = 0.01;
  std::uint64_t seed = 0;
  /// Discarded span before the first returned state (bistable only; OU
  /// starts from its invariant law).
  double burn_in = 20.0;
  /// Fixed starting state; overrides the invariant-law draw.
  std::optional<Eigen::VectorXd> initial_state;

  /// sigma sigma^T / 2.
  Eigen::MatrixXd diffusion() const { return 0.5 * sigma * sigma.transpose(); }
  bool degenerate() const { return sigma.cwiseAbs().maxCoeff() == 0.0; }
  /// Decorrelation time scale: 1/gamma (OU) or 1/(2 theta) (bistable).
  double correlation_time() const;
  void validate() const;
};

/// Uniformly spaced driver states xi(s_k), s_k = start + k ds.
struct DriverPath {
  double start = 0.0;
  double ds = 0.01;
  std::uint64_t seed = 0;
  Eigen::MatrixXd states;  // (K + 1) x N

  Eigen::Index size() const { return states.rows(); }
  int dimension() const { return static_cast<int>(states.cols()); }
  double time(Eigen::Index k) const { return start + static_cast<double>(k) * ds; }
  double end() const { return time(size() - 1); }
  Eigen::VectorXd state(Eigen::Index k) const { return states.row(k).transpose(); }
  /// Index of the sample in force at time s (piecewise-constant in time).
  Eigen::Index index_at(double s) const;
  /// Same states traversed backwards; time s maps to -s.
  DriverPath reversed() const;
};

/// Path on [start, start + horizon] (the last state sits at or beyond the end).
DriverPath sample_driver(const DriverSpec& spec, double horizon, double start = 0.0);

/// Generator with an independent stream per (seed, stream).
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream);

enum class Link { Tanh, Sin };

double apply_link(Link link, double x);
std::string link_name(Link link);
Link link_from_name(const std::string& name);

/// g(y) = link(scale * y[component]) times the matrix field `field`.
struct Modulation {
  Field field;
  Link link = Link::Tanh;
  int component = 0;
  double scale = 1.0;
};

class CoefficientModel {
 public:
  CoefficientModel() = default;
  CoefficientModel(std::string name, Field base, std::vector<Modulation> modulations,
                   DriverSpec driver);

  const std::string& name() const { return name_; }
  const TorusGrid& grid() const { return base_.grid(); }
  int dimension() const { return base_.dimension(); }
  const Field& base() const { return base_; }
  const std::vector<Modulation>& modulations() const { return modulations_; }
  const DriverSpec& driver() const { return driver_; }
  DriverSpec& driver() { return driver_; }

  /// Certified floor: lambda <= eig(a) <= 1/lambda for every z and y.
  double ellipticity() const { return lambda_; }
  /// Certified eigenvalue range of a over all z, y.
  double eig_min() const { return eig_min_; }
  double eig_max() const { return eig_max_; }

  /// True when a does not depend on s.
  bool time_independent() const { return modulations_.empty(); }

  Eigen::VectorXd link_values(const Eigen::Ref<const Eigen::VectorXd>& y) const;

  /// a(., y) written into `out` (allocated on first use).
  void evaluate_into(const Eigen::Ref<const Eigen::VectorXd>& y, Field& out) const;
  Field evaluate(const Eigen::Ref<const Eigen::VectorXd>& y) const;

  /// Stable hash of the model definition and the driver parameters (not the seed).
  std::uint64_t hash() const;

 private:
  void certify();

  std::string name_;
  Field base_;
  std::vector<Modulation> modulations_;
  DriverSpec driver_;
  double lambda_ = 1.0, eig_min_ = 1.0, eig_max_ = 1.0;
};

/// a(., s_k) for the path sample k, with the eigenvalue range checked at every node.
Field evaluate_a(const CoefficientModel& model, const DriverPath& path, Eigen::Index s_index);

/// Reference models.
/// R1: a = 2 + sin(2 pi z) tanh(xi), OU gamma = 1, sigma = sqrt 2.
CoefficientModel make_r1(int resolution, double ds = 0.01);
/// R2: a = 2 + sin(2 pi z), no time dependence.
CoefficientModel make_r2(int resolution, double ds = 0.01);
/// a = A everywhere.
CoefficientModel make_constant(const Eigen::MatrixXd& A, int resolution, double ds = 0.01);
/// 2D diagonal test model diag(2 + sin 2 pi z1, 2 + sin 2 pi z2) with an
/// optional tanh(xi) modulation of the off-diagonal entries.
CoefficientModel make_separable_2d(int resolution, double offdiag_modulation = 0.0,
                                   double ds = 0.01);
/// a = c0 + c1 sin(2 pi z) link(xi) (1D); general 1D family used by configs.
CoefficientModel make_sinusoidal_1d(int resolution, double c0, double c1, Link link,
                                    const DriverSpec& driver);

/// a = 2 + sin(2 pi z) + sin(4 pi z) / 2, no time dependence; no reflection
/// symmetry, so mu does not vanish.
CoefficientModel make_asymmetric(int resolution, double ds = 0.01);
/// R1 coefficient under a fast OU driver: gamma, sigma = sqrt(2 gamma).
CoefficientModel make_fast_driver(int resolution, double gamma, double ds);

/// R1, R2, constant (a = 2), separable2d, asymmetric, fast (gamma = 10).
CoefficientModel make_model(const std::string& name, int resolution, double ds = 0.01);

struct MixingReport {
  std::vector<double> lags;
  /// One autocorrelation curve per modulation observable g_k(xi_s).
  std::vector<std::vector<double>> autocorrelation;
  std::vector<double> exponential_rate;
  std::vector<double> power_exponent;
  std::vector<double> integrated;  // left Riemann sum of rho over [0, max_lag)
  std::vector<double> tail;        // |integral of rho over [max_lag/2, max_lag)|
  double tolerance = 0.0;
  bool pass = false;
};

/// Autocorrelation-decay proxy for the mixing hypothesis. Requires the path
/// to span at least 10 max_lag.
MixingReport mixing_diagnostic(const CoefficientModel& model, const DriverPath& path,
                               double max_lag, double tolerance = 0.05);

/// Same diagnostic on raw observable series (rows = time, cols = observables).
MixingReport mixing_diagnostic_series(const Eigen::MatrixXd& series, double ds, double max_lag,
                                      double tolerance = 0.05);

}  // namespace parahom

#endif  // PARAHOM_COEFF_MODELS_HPP
