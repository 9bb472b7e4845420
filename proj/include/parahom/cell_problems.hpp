#ifndef PARAHOM_CELL_PROBLEMS_HPP
#define PARAHOM_CELL_PROBLEMS_HPP

// Cell problems on T^n: the stationary parabolic corrector and its
// time-reversed twin, the second corrector chi_{2,2}, the initial layer, the
// elliptic correctors of the frozen and averaged regimes, and the joint
// (z, y) corrector of a diffusion-driven 1D model.
//
// Time stepping convention: on the driver interval [s_n, s_{n+1}] the
// coefficient is a_n = a(., xi(s_n)); one implicit Euler step per interval.
// The forward corrector solves (I - ds L_n) chi^{n+1} = chi^n + ds L_n z and
// its flux F_n is evaluated with (a_n, chi^{n+1}); the reversed corrector
// solves (I - ds L_n) eta^n = eta^{n+1} + ds L_n z with flux (a_n, eta^n).

#include "parahom/coeff_models.hpp"
#include "parahom/flux_operator.hpp"
#include "parahom/torus.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace parahom {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a time-marched solution fails its stationarity checks.
class BurnInError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Worst-case spectral gap lambda (2 pi)^2 from the ellipticity floor.
double spectral_gap_estimate(const CoefficientModel& model);
/// Decay rate per unit s of one implicit step at that gap: log(1 + ds nu) / ds.
double discrete_decay_rate(const CoefficientModel& model, double ds);
/// 40 / nu_disc: e^{-nu burn_in} ~ 4e-18.
double default_burn_in(const CoefficientModel& model, double ds);

/// Per-interval kernels shared by every time-marched cell problem.
class CellStepper {
 public:
  explicit CellStepper(const CoefficientModel& model);

  const CoefficientModel& model() const { return *model_; }
  const TorusGrid& grid() const { return model_->grid(); }
  int dimension() const { return model_->dimension(); }
  double ds() const { return ds_; }
  const FluxOperator<double>& op() const { return op_; }
  const Field& coefficient() const { return a_; }

  /// Freezes a = a(., y) for the coming interval and factors I - ds L.
  void set_state(const Eigen::Ref<const Vec>& y);
  /// Same for an explicit coefficient field.
  void set_coefficient(const Field& a);

  /// One corrector step on columns j of `chi` (M^n x n); the spatial mean is
  /// removed afterwards. Returns the largest mean drift before removal.
  double advance_corrector(Mat& chi);
  /// Homogeneous step (I - ds L) w^+ = w.
  double advance_homogeneous(Mat& w);
  /// Forced step (I - ds L) w^+ = w + ds f, columnwise.
  double advance_forced(Mat& w, const Mat& f);

  /// F^{ij} = mean of [a (I + grad chi)]^{ij}, flattened row-major (n^2).
  Vec flux(const Mat& chi) const;
  /// Psi_{2,2}^{jk} = q_j(chi^k) - F^{jk} + sum_i d_i (a^{ij} chi^k), columns j*n + k.
  Mat psi22(const Mat& chi, const Eigen::Ref<const Vec>& F) const;
  /// a grad chi_{2,2} contracted as {a^{ij} d_l chi22^{lk}}, flattened (i*n + j)*n + k.
  Mat a_grad_chi22(const Mat& chi22) const;
  /// Space mean of (a - aeff) (x) chi + a grad chi_{2,2}, flattened (i*n + j)*n + k.
  Vec mu_integrand(const Mat& chi, const Mat& chi22, const Mat& aeff) const;
  /// Psi_3 contracted onto a single 1D field (n = 1 only):
  /// (a - aeff) chi + d(a chi22) + a d chi22.
  Vec psi3_1d(const Mat& chi, const Mat& chi22, double aeff) const;

 private:
  const CoefficientModel* model_;
  double ds_;
  Field a_;
  FluxOperator<double> op_;
  Vec rhs_;
  std::vector<Vec> forcing_;
};

struct CorrectorOptions {
  double burn_in = -1.0;  // < 0: default_burn_in
  /// Output window [start, start + horizon]; burn-in precedes start
  /// (forward) or follows start + horizon (reversed).
  double start = 0.0;
  double horizon = 0.0;
  Eigen::Index retain_stride = 1;
  bool random_init = false;
  std::uint64_t init_seed = 1;
  /// Run a second, randomly initialised march and throw BurnInError when the
  /// two disagree by more than `uniqueness_tol` (relative L2).
  bool verify_uniqueness = false;
  double uniqueness_tol = 1e-8;
};

struct CorrectorTrajectory {
  TorusGrid grid;
  bool reversed = false;
  double ds = 0.0;
  double burn_in = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> times;       // retained output times, increasing
  std::vector<Mat> values;         // (M^n x n) per retained time
  std::vector<double> flux_times;  // left endpoints of the flux intervals
  Mat flux;                        // (intervals x n^2), row-major entries
  bool mean_zero = true;
  double max_mean_drift = 0.0;
  double sup_l2 = 0.0;
  double sup_linf = 0.0;

  Eigen::Index retained() const { return static_cast<Eigen::Index>(values.size()); }
  Field field(Eigen::Index r) const { return Field(grid, FieldRank::Vector, values[r]); }
};

/// Stationary solution of d_s chi = div(a (I + grad chi)) on the output
/// window. The path must start at or before start - burn_in.
CorrectorTrajectory solve_parabolic_corrector(const CoefficientModel& model, const DriverPath& path,
                                              const CorrectorOptions& opts);
/// Stationary solution of -d_s chi_- = div(a (I + grad chi_-)) on the
/// output window; the path must extend to start + horizon + burn_in.
CorrectorTrajectory solve_reversed_corrector(const CoefficientModel& model, const DriverPath& path,
                                             const CorrectorOptions& opts);

/// Largest relative L2 discrepancy between a zero-initialised and a randomly
/// initialised forward march over the retained times.
double corrector_uniqueness_gap(const CoefficientModel& model, const DriverPath& path,
                                const CorrectorOptions& opts);

struct Chi22Trajectory {
  TorusGrid grid;
  double ds = 0.0;
  double burn_in = 0.0;
  std::vector<double> times;
  std::vector<Mat> values;  // (M^n x n^2), column j*n + k
  double max_psi22_mean = 0.0;
  double sup_l2 = 0.0;

  Eigen::Index retained() const { return static_cast<Eigen::Index>(values.size()); }
};

/// Assembles Psi_{2,2}(., s) = {a (I + grad chi) - aeff} - psi21 + div(a (x) chi)
/// for the coefficient currently held by `stepper` (chi taken after the step).
Mat compute_psi22(const CellStepper& stepper, const Mat& chi, const Mat& aeff, const Mat& psi21);

/// Stationary chi_{2,2} forced by Psi_{2,2}. `chi` must retain every step;
/// chi_{2,2} starts from `init` (zero if empty) at chi's first time and is
/// reported after `burn_in`. Throws if mean(Psi_{2,2}) exceeds 1e-10.
Chi22Trajectory solve_chi22(const CoefficientModel& model, const DriverPath& path,
                            const CorrectorTrajectory& chi, const Mat& aeff, double burn_in,
                            const Mat& init = Mat());

struct InitialLayer {
  TorusGrid grid;
  double ds = 0.0;
  std::vector<double> times;  // s >= 0, every step
  std::vector<double> l2;     // L2 norm over all components
  std::vector<double> linf;
  std::vector<double> mean_abs;  // largest |mean| over components
  std::vector<double> snapshot_times;
  std::vector<Mat> snapshots;
  double nu_hat = 0.0;
  double envelope = 0.0;  // smallest C with |chi_il(s)|_inf <= C e^{-nu_hat s}
};

/// chi_il solving the homogeneous corrector equation from -chi(., 0), marched
/// over [0, span] on the path intervals starting at s = 0.
InitialLayer solve_initial_layer(const CoefficientModel& model, const DriverPath& path,
                                 const Mat& chi_at_0, double span,
                                 Eigen::Index snapshot_stride = 0);

/// Decay rate from a log-linear fit over the tail of a norm history.
double fit_decay_rate(const std::vector<double>& times, const std::vector<double>& norms);

struct EllipticResult {
  Field chi;          // vector field, one column per unit direction
  Mat aeff;           // mean of a (I + grad chi)
  double residual = 0.0;  // relative residual of the worst column
  int iterations = 0;
};

/// Solves -L x = f for mean-zero f by conjugate gradients; x has zero mean.
Vec solve_elliptic(const FluxOperator<double>& op, const Eigen::Ref<const Vec>& f,
                   double tol, int max_iter, double* residual = nullptr, int* iterations = nullptr);

/// div(a (I + grad chi)) = 0 on T^n.
EllipticResult solve_elliptic_corrector(const Field& a, double tol = 1e-12, int max_iter = 0);

struct AveragedCorrector {
  Field abar;
  EllipticResult corrector;
};

/// abar = time average of a over the path intervals; chi_+ from abar.
AveragedCorrector solve_averaged_corrector(const CoefficientModel& model, const DriverPath& path);

struct JointCorrector {
  int nz = 0, ny = 0;
  double y_half_width = 0.0;
  Eigen::VectorXd y;        // cell centres
  Eigen::VectorXd weight;   // invariant-law mass of each y cell, sums to 1
  Mat chi;                  // (nz x ny)
  double aeff = 0.0;
  double outside_mass = 0.0;
  double residual = 0.0;
  int iterations = 0;
};

/// Stationary (A + L) chi0 = -d_z a on T x [-Ly, Ly] for a 1D model with a
/// scalar OU driver, zero flux in y. `y_half_width` is in units of the
/// invariant standard deviation.
JointCorrector solve_joint_corrector_1d(const CoefficientModel& model, double y_half_width, int ny,
                                        double tol = 1e-11);

}  // namespace parahom

#endif  // PARAHOM_CELL_PROBLEMS_HPP
