#ifndef PARAHOM_PDE_HPP
#define PARAHOM_PDE_HPP

// One-dimensional macroscopic solvers: the fine-scale problem with rapidly
// oscillating coefficient a(x/eps, t/eps^2) and its forced variants, the
// homogenised solution u0 with its derivatives, the deterministic drift
// problem Xi_{0,2} and the limit SPDE for U0.
//
// Fine solves live on [-L, L] with homogeneous Dirichlet ends and spacing
// h = eps / M (M the torus resolution), so fine node m sits exactly on torus
// node (m - L M / eps) mod M. The fine step is dt = eps^2 ds: fine step n uses
// the coefficient of driver interval n, and dt / h^2 equals the torus ratio
// ds M^2, so the fine operator is the tiled torus operator scaled by eps^-2.
//
// Spectral solvers live on the periodic box [-L, L) with Fourier
// differentiation; time stepping is implicit Euler for the constant
// coefficient part applied mode by mode.

#include "parahom/cell_problems.hpp"
#include "parahom/coeff_models.hpp"
#include "parahom/effective.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace parahom {

/// Raised when the fine grid does not resolve the eps-cell.
class ResolutionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when the solution reaches the truncated boundary.
class BoundaryContaminationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpatialDomain {
  double half_width = 8.0;
  /// Number of intervals; Dirichlet nodes x_m = -L + m h for m = 0..intervals,
  /// periodic nodes for m = 0..intervals - 1.
  Eigen::Index intervals = 256;
  bool periodic = false;

  double spacing() const { return 2.0 * half_width / double(intervals); }
  Eigen::Index points() const { return periodic ? intervals : intervals + 1; }
  double node(Eigen::Index m) const { return -half_width + double(m) * spacing(); }
  Vec nodes() const;

  /// Dirichlet domain with h = eps / cell_nodes; L cell_nodes / eps must be an integer.
  static SpatialDomain fine(double half_width, double eps, int cell_nodes);
  static SpatialDomain spectral(double half_width, Eigen::Index points);
};

/// A g (x - c) with g a Gaussian of width w: A exp(-(x - c)^2 / (2 w^2)).
struct GaussianBump {
  double amplitude = 1.0;
  double centre = 0.0;
  double width = 1.0;
};

/// Probabilists' Hermite polynomial He_k(y), k <= 6.
double hermite(int k, double y);

/// d^order/dx^order of the heat evolution of a Gaussian under d_t u = a u_xx.
double heat_gaussian(const GaussianBump& g, double a, double x, double t, int order);

/// Initial data with derivatives through order 4.
class InitialData {
 public:
  using Function = std::function<double(double x, int order)>;

  InitialData() : InitialData(gaussian(1.0, 0.0, 1.0)) {}
  explicit InitialData(Function f) : f_(std::move(f)) {}
  static InitialData gaussian(double amplitude, double centre, double width);

  double operator()(double x, int order = 0) const { return f_(x, order); }
  bool is_gaussian() const { return gaussian_; }
  const GaussianBump& bump() const { return bump_; }

  /// sup |d^k g| (1 + |x|)^K over a sample grid on [-r, r], for k = 0..4.
  Vec decay_constants(int K, double r, int samples = 4001) const;
  /// Integral of |g| outside [-r, r] (trapezoid out to `outer`).
  double tail_mass(double r, double outer, int samples = 20001) const;

 private:
  Function f_;
  bool gaussian_ = false;
  GaussianBump bump_;
};

struct SolutionField {
  std::string equation;
  double eps = 0.0;
  std::uint64_t seed = 0;
  SpatialDomain domain;
  std::vector<double> times;
  Mat values;  // points x times

  Vec x() const { return domain.nodes(); }
  Eigen::Index samples() const { return static_cast<Eigen::Index>(times.size()); }
  /// Spatial L2 norm at sample j.
  double l2_at(Eigen::Index j) const;
  /// L2 over space and the recorded times (trapezoid in t).
  double l2_space_time() const;
  bool finite() const { return values.allFinite(); }
};

/// u0 and its derivatives on the nodes of a domain: closed form for Gaussian
/// data, Fourier multipliers on the periodic box otherwise.
class HomogenizedProfile {
 public:
  HomogenizedProfile(double aeff, const InitialData& g, const SpatialDomain& domain);

  bool closed_form() const { return g_.is_gaussian(); }
  double aeff() const { return aeff_; }
  /// Columns d^0 u0, ..., d^max_order u0 at time t (points x (max_order + 1)).
  void evaluate(double t, int max_order, Mat& out) const;
  Mat evaluate(double t, int max_order) const;

 private:
  double aeff_;
  InitialData g_;
  SpatialDomain domain_;
  Vec x_;
  Eigen::VectorXcd ghat_;
  Vec kappa_;
};

struct U0Fields {
  SolutionField u, d1, d2, d3;
  bool closed_form = false;
};

U0Fields solve_u0(double aeff, const InitialData& g, const SpatialDomain& domain,
                  const std::vector<double>& times);

/// Inputs of the forced fine problems. Trajectories must retain every step
/// and cover s in [0, T / eps^2] (flux and fluctuation series per interval).
struct FineCoupling {
  double aeff = 0.0;
  double mu = 0.0;
  const CorrectorTrajectory* chi = nullptr;
  const FluctuationSeries* psi21 = nullptr;
  const Chi22Trajectory* chi22 = nullptr;
};

struct FineOptions {
  bool solve_u = true;
  bool solve_v = false;    // V^{eps,1}
  bool solve_xi1 = false;  // Xi_{eps,1}
  bool solve_xi2 = false;  // Xi_{eps,2}
  /// Evenly spaced snapshots besides t = 0 (0: initial and final only).
  Eigen::Index snapshots = 0;
  /// Test functions for the space-time projections <U^eps, phi>.
  std::vector<std::function<double(double)>> test_functions;
  /// Largest admissible integral of |u| over the outer tenth of the domain.
  double boundary_tol = 1e-8;
};

struct FineResult {
  double eps = 0.0, dt = 0.0;
  Eigen::Index steps = 0;
  SolutionField u, v, xi1, xi2, U;
  // Space-time L2 norms accumulated at every step (trapezoid in t).
  double u_minus_u0 = 0.0;            // |u - u0|
  double u_minus_corrected = 0.0;     // |u - u0 - eps chi d u0|
  double U_norm = 0.0;                // |U^eps|
  double v_scaled = 0.0;              // |V / eps|
  double chi21_term = 0.0;            // |eps chi21(t/eps^2) d^2 u0|
  double v_remainder = 0.0;           // difference of the previous two
  double xi1_norm = 0.0, xi2_norm = 0.0;
  double xi02_norm = 0.0, xi2_gap = 0.0;  // |Xi_{0,2}|, |Xi_{eps,2} - Xi_{0,2}|
  Vec proj_U;          // int int U^eps phi_k dx dt
  Vec proj_chi_term;   // int int chi(x/eps, t/eps^2) d u0 phi_k dx dt
  // Monitors of the unforced solve.
  double mass_defect = 0.0;        // max_t |int u - int g|
  double max_principle_excess = 0.0;
  double energy_increase = 0.0;    // largest step-to-step growth of |u|_2
  double boundary_mass = 0.0;
};

/// Marches u^eps and the requested forced problems with a shared
/// factorisation per step. Needs a 1D model and a Dirichlet domain whose
/// spacing is eps / M.
FineResult solve_fine(const CoefficientModel& model, const DriverPath& path, double eps,
                      const InitialData& g, const SpatialDomain& domain, double T,
                      const FineCoupling& coupling, const FineOptions& options);

SolutionField solve_u_eps(const CoefficientModel& model, const DriverPath& path, double eps,
                          const InitialData& g, const SpatialDomain& domain, double T,
                          Eigen::Index snapshots = 0);

/// Fine problem with zero data forced by Psi_{2,1}(t/eps^2) d^2 u0.
SolutionField solve_V_eps1(const CoefficientModel& model, const DriverPath& path, double eps,
                           const FluctuationSeries& psi21, double aeff, const InitialData& g,
                           const SpatialDomain& domain, double T, Eigen::Index snapshots = 0);

/// Fine problem with zero data forced by (Psi_3 - mu) d^3 u0.
SolutionField solve_xi_eps1(const CoefficientModel& model, const DriverPath& path, double eps,
                            double mu, const CorrectorTrajectory& chi,
                            const Chi22Trajectory& chi22, double aeff, const InitialData& g,
                            const SpatialDomain& domain, double T, Eigen::Index snapshots = 0);

/// Fine problem with zero data forced by mu d^3 u0.
SolutionField solve_xi_eps2(const CoefficientModel& model, const DriverPath& path, double eps,
                            double mu, double aeff, const InitialData& g,
                            const SpatialDomain& domain, double T, Eigen::Index snapshots = 0);

struct AssembledU {
  SolutionField U;
  /// Space-time L2 of u^eps - u0 over the recorded times.
  double u_minus_u0 = 0.0;
};

/// U^eps = (u^eps - u0) / eps - chi(x/eps, t/eps^2) d u0 at the recorded times
/// of u_eps; chi must cover t / eps^2 for every recorded t.
AssembledU assemble_U_eps(const SolutionField& u_eps, const HomogenizedProfile& u0,
                          const CorrectorTrajectory& chi, double eps);

/// Standard Wiener increments on a uniform grid.
struct WienerPath {
  int dimension = 1;
  double dt = 0.0;
  std::uint64_t seed = 0;
  Mat increments;  // steps x dimension

  Eigen::Index steps() const { return increments.rows(); }
  double horizon() const { return double(steps()) * dt; }
  /// Sums of consecutive groups of `factor` increments.
  WienerPath aggregate(Eigen::Index factor) const;
  /// W at step k (k = 0..steps).
  Vec value(Eigen::Index k) const;
};

/// Samples the increments and rejects them if their moments are off
/// (|z| > 6 for mean or variance, a generator fault).
WienerPath sample_wiener(int dimension, double T, double dt, std::uint64_t seed);

struct SpectralOptions {
  /// Record every `stride` steps (0: initial and final only).
  Eigen::Index stride = 0;
  std::vector<std::function<double(double)>> test_functions;
};

struct SPDEPath {
  WienerPath wiener;
  SolutionField U;
  std::uint64_t seed = 0;
  /// int_0^T int U phi_k dx dt (trapezoid in t).
  Vec projections;
};

/// Xi_{0,2}: d_t X = aeff X_xx + mu d^3 u0, X(0) = 0, implicit Euler with the
/// forcing taken at the left end of each step.
SolutionField solve_xi02(double aeff, double mu, const InitialData& g, const SpatialDomain& domain,
                         double T, double dt, const SpectralOptions& opts = {});

/// Duhamel integral int_0^t e^{(t - tau) aeff d^2} mu d^3 u0(tau) dtau by
/// Gauss-Legendre quadrature in tau, mode by mode.
SolutionField xi02_duhamel(double aeff, double mu, const InitialData& g, const SpatialDomain& domain,
                           const std::vector<double>& times, int quadrature_nodes = 24);

/// Semi-implicit Euler-Maruyama for
/// dU = (aeff U_xx + mu d^3 u0) dt + (Lambda^{1/2} dW) d^2 u0, U(0) = 0.
SPDEPath solve_spde(double aeff, double mu, const Mat& lambda_sqrt, const InitialData& g,
                    const SpatialDomain& domain, double T, const WienerPath& wiener,
                    const SpectralOptions& opts = {});

/// Xi_{0,2}(t) + (Lambda^{1/2} W_t) d^2 u0(t), exact in time on the periodic box.
SolutionField spde_exact(double aeff, double mu, const Mat& lambda_sqrt, const InitialData& g,
                         const SpatialDomain& domain, const WienerPath& wiener,
                         const std::vector<Eigen::Index>& steps);

}  // namespace parahom

#endif  // PARAHOM_PDE_HPP
