#include "parahom/cell_problems.hpp"

#include "parahom/stats.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace parahom {

namespace {

constexpr double kTwoPi = 2.0 * EIGEN_PI;

double rms(const Mat& m) {
  return m.size() == 0 ? 0.0 : std::sqrt(m.squaredNorm() / double(m.rows()));
}

Mat random_mean_zero(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  auto rng = make_rng(seed, 7);
  std::normal_distribution<double> normal;
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  m.rowwise() -= m.colwise().mean();
  return m;
}

Eigen::Index steps_for(double span, double ds) {
  return static_cast<Eigen::Index>(std::llround(span / ds));
}

CorrectorTrajectory march_corrector(const CoefficientModel& model, const DriverPath& path,
                                    const CorrectorOptions& opts, bool reversed, bool random_init) {
  const double ds = path.ds;
  if (std::abs(ds - model.driver().ds) > 1e-15 * ds)
    throw std::invalid_argument("corrector: path step differs from the model's driver step");
  if (!(opts.horizon > 0)) throw std::invalid_argument("corrector: horizon must be positive");
  if (opts.retain_stride < 1) throw std::invalid_argument("corrector: retain_stride must be >= 1");
  const double burn = opts.burn_in < 0 ? default_burn_in(model, ds) : opts.burn_in;
  const Eigen::Index nb = steps_for(burn, ds), nh = steps_for(opts.horizon, ds);
  const Eigen::Index n0 = path.index_at(opts.start);
  const Eigen::Index K = path.size() - 1;  // number of intervals
  if (!reversed && n0 - nb < 0)
    throw std::invalid_argument("corrector: driver path does not cover the burn-in span");
  if (!reversed && n0 + nh > K)
    throw std::invalid_argument("corrector: driver path shorter than the horizon");
  if (reversed && n0 + nh + nb > K)
    throw std::invalid_argument("reversed corrector: driver path must extend beyond the horizon");

  const int n = model.dimension();
  const Eigen::Index N = model.grid().size();
  CellStepper stepper(model);
  CorrectorTrajectory tr;
  tr.grid = model.grid();
  tr.reversed = reversed;
  tr.ds = ds;
  tr.burn_in = double(nb) * ds;
  tr.seed = path.seed;
  tr.flux.resize(nh, n * n);
  tr.flux_times.resize(nh);
  for (Eigen::Index r = 0; r < nh; ++r) tr.flux_times[r] = path.time(n0 + r);

  Mat chi = random_init ? random_mean_zero(N, n, opts.init_seed) : Mat::Zero(N, n);
  auto observe = [&](const Mat& v, Eigen::Index node) {
    const Eigen::Index off = node - n0;
    tr.sup_l2 = std::max(tr.sup_l2, rms(v));
    tr.sup_linf = std::max(tr.sup_linf, v.size() ? v.cwiseAbs().maxCoeff() : 0.0);
    if (off % opts.retain_stride == 0) {
      tr.times.push_back(path.time(node));
      tr.values.push_back(v);
    }
  };

  if (!reversed) {
    if (nb == 0) observe(chi, n0);
    for (Eigen::Index k = n0 - nb; k < n0 + nh; ++k) {
      stepper.set_state(path.state(k));
      tr.max_mean_drift = std::max(tr.max_mean_drift, stepper.advance_corrector(chi));
      if (k >= n0) tr.flux.row(k - n0) = stepper.flux(chi).transpose();
      if (k + 1 >= n0) observe(chi, k + 1);
    }
  } else {
    const Eigen::Index top = n0 + nh;
    if (nb == 0) observe(chi, top);
    for (Eigen::Index k = top + nb - 1; k >= n0; --k) {
      stepper.set_state(path.state(k));
      tr.max_mean_drift = std::max(tr.max_mean_drift, stepper.advance_corrector(chi));
      if (k < top) tr.flux.row(k - n0) = stepper.flux(chi).transpose();
      if (k <= top) observe(chi, k);
    }
    std::reverse(tr.times.begin(), tr.times.end());
    std::reverse(tr.values.begin(), tr.values.end());
  }
  if (!tr.flux.allFinite()) throw std::runtime_error("corrector: solver produced non-finite values");
  tr.mean_zero = true;
  return tr;
}

double trajectory_gap(const CorrectorTrajectory& a, const CorrectorTrajectory& b) {
  double gap = 0;
  for (std::size_t r = 0; r < a.values.size(); ++r) {
    const double d = rms(a.values[r] - b.values[r]);
    gap = std::max(gap, d);
  }
  return a.sup_l2 > 0 ? gap / a.sup_l2 : gap;
}

}  // namespace

double spectral_gap_estimate(const CoefficientModel& model) {
  return model.ellipticity() * kTwoPi * kTwoPi;
}

double discrete_decay_rate(const CoefficientModel& model, double ds) {
  return std::log1p(ds * spectral_gap_estimate(model)) / ds;
}

double default_burn_in(const CoefficientModel& model, double ds) {
  return 40.0 / discrete_decay_rate(model, ds);
}

CellStepper::CellStepper(const CoefficientModel& model)
    : model_(&model), ds_(model.driver().ds), a_(model.grid(), FieldRank::Matrix),
      op_(model.grid()), rhs_(model.grid().size()) {}

void CellStepper::set_state(const Eigen::Ref<const Vec>& y) {
  model_->evaluate_into(y, a_);
  op_.reset(a_, false);
  op_.factor_implicit(ds_);
  const int n = dimension();
  forcing_.resize(n);
  for (int j = 0; j < n; ++j) forcing_[j] = op_.unit_forcing(j);
}

void CellStepper::set_coefficient(const Field& a) {
  a_ = a;
  op_.reset(a_, true);
  op_.factor_implicit(ds_);
  const int n = dimension();
  forcing_.resize(n);
  for (int j = 0; j < n; ++j) forcing_[j] = op_.unit_forcing(j);
}

double CellStepper::advance_corrector(Mat& chi) {
  double drift = 0;
  for (Eigen::Index j = 0; j < chi.cols(); ++j) {
    rhs_ = chi.col(j) + ds_ * forcing_[j];
    op_.solve_implicit(rhs_);
    const double m = rhs_.mean();
    drift = std::max(drift, std::abs(m));
    chi.col(j) = rhs_.array() - m;
  }
  return drift;
}

double CellStepper::advance_homogeneous(Mat& w) {
  double drift = 0;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    const double before = w.col(j).mean();
    rhs_ = w.col(j);
    op_.solve_implicit(rhs_);
    drift = std::max(drift, std::abs(rhs_.mean() - before));
    w.col(j) = rhs_;
  }
  return drift;
}

double CellStepper::advance_forced(Mat& w, const Mat& f) {
  double drift = 0;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    rhs_ = w.col(j) + ds_ * f.col(j);
    op_.solve_implicit(rhs_);
    const double m = rhs_.mean();
    drift = std::max(drift, std::abs(m));
    w.col(j) = rhs_.array() - m;
  }
  return drift;
}

Vec CellStepper::flux(const Mat& chi) const {
  const int n = dimension();
  Vec F(n * n);
  for (int j = 0; j < n; ++j) {
    const Vec m = op_.flux_mean(chi.col(j), j);
    for (int i = 0; i < n; ++i) F(i * n + j) = m(i);
  }
  return F;
}

Mat CellStepper::psi22(const Mat& chi, const Eigen::Ref<const Vec>& F) const {
  const int n = dimension();
  Mat out(grid().size(), n * n);
  for (int k = 0; k < n; ++k) {
    const Mat q = op_.nodal_flux(chi.col(k), k);
    for (int j = 0; j < n; ++j)
      out.col(j * n + k) = q.col(j).array() - F(j * n + k) +
                           op_.divergence_of_product(j, chi.col(k)).array();
  }
  return out;
}

Mat CellStepper::a_grad_chi22(const Mat& chi22) const {
  const int n = dimension();
  const Eigen::Index N = grid().size();
  Mat out(N, n * n * n);
  if (n == 1) {
    out.col(0) = op_.nodal_flux(chi22.col(0), -1).col(0);
    return out;
  }
  // d_l chi22^{lk} by centred differences, then multiplied by a^{ij}.
  Mat dv = Mat::Zero(N, n);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l)
      dv.col(k) += detail::partial<double>(grid(), chi22.col(l * n + k), l, DiffScheme::CentralDifference);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        out.col((i * n + j) * n + k) = a_.component(i * n + j).cwiseProduct(dv.col(k));
  return out;
}

Vec CellStepper::mu_integrand(const Mat& chi, const Mat& chi22, const Mat& aeff) const {
  const int n = dimension();
  const Mat g = a_grad_chi22(chi22);
  Vec mu(n * n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const int c = (i * n + j) * n + k;
        mu(c) = ((a_.component(i * n + j).array() - aeff(i, j)) * chi.col(k).array()).mean() +
                g.col(c).mean();
      }
  return mu;
}

Vec CellStepper::psi3_1d(const Mat& chi, const Mat& chi22, double aeff) const {
  if (dimension() != 1) throw std::invalid_argument("psi3_1d: one-dimensional model expected");
  Vec out = (a_.component(0).array() - aeff) * chi.col(0).array();
  out += op_.divergence_of_product(0, chi22.col(0));
  out += op_.nodal_flux(chi22.col(0), -1).col(0);
  return out;
}

CorrectorTrajectory solve_parabolic_corrector(const CoefficientModel& model, const DriverPath& path,
                                              const CorrectorOptions& opts) {
  CorrectorTrajectory tr = march_corrector(model, path, opts, false, opts.random_init);
  if (opts.verify_uniqueness) {
    CorrectorOptions o = opts;
    o.init_seed = opts.init_seed + 1000003;
    const CorrectorTrajectory other = march_corrector(model, path, o, false, !opts.random_init);
    const double gap = trajectory_gap(tr, other);
    if (!(gap <= opts.uniqueness_tol))
      throw BurnInError("corrector: burn-in insufficient, initialisations differ by " +
                        std::to_string(gap));
  }
  return tr;
}

CorrectorTrajectory solve_reversed_corrector(const CoefficientModel& model, const DriverPath& path,
                                             const CorrectorOptions& opts) {
  CorrectorTrajectory tr = march_corrector(model, path, opts, true, opts.random_init);
  if (opts.verify_uniqueness) {
    CorrectorOptions o = opts;
    o.init_seed = opts.init_seed + 1000003;
    const CorrectorTrajectory other = march_corrector(model, path, o, true, !opts.random_init);
    const double gap = trajectory_gap(tr, other);
    if (!(gap <= opts.uniqueness_tol))
      throw BurnInError("reversed corrector: burn-in insufficient, initialisations differ by " +
                        std::to_string(gap));
  }
  return tr;
}

double corrector_uniqueness_gap(const CoefficientModel& model, const DriverPath& path,
                                const CorrectorOptions& opts) {
  const CorrectorTrajectory a = march_corrector(model, path, opts, false, false);
  const CorrectorTrajectory b = march_corrector(model, path, opts, false, true);
  return trajectory_gap(a, b);
}

Mat compute_psi22(const CellStepper& stepper, const Mat& chi, const Mat& aeff, const Mat& psi21) {
  const int n = stepper.dimension();
  if (aeff.rows() != n || aeff.cols() != n || psi21.rows() != n || psi21.cols() != n)
    throw std::invalid_argument("compute_psi22: aeff and psi21 must be n x n");
  Vec centre(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) centre(i * n + j) = aeff(i, j) + psi21(i, j);
  return stepper.psi22(chi, centre);
}

Chi22Trajectory solve_chi22(const CoefficientModel& model, const DriverPath& path,
                            const CorrectorTrajectory& chi, const Mat& aeff, double burn_in,
                            const Mat& init) {
  const int n = model.dimension();
  if (chi.grid != model.grid()) throw std::invalid_argument("solve_chi22: grid mismatch");
  if (chi.flux.rows() + 1 != chi.retained())
    throw std::invalid_argument("solve_chi22: corrector must retain every step");
  if (aeff.rows() != n || aeff.cols() != n) throw std::invalid_argument("solve_chi22: aeff must be n x n");
  const Eigen::Index R = chi.flux.rows();
  const Eigen::Index nb = steps_for(burn_in, chi.ds);
  if (nb >= R) throw std::invalid_argument("solve_chi22: corrector horizon shorter than the burn-in");

  CellStepper stepper(model);
  Chi22Trajectory out;
  out.grid = model.grid();
  out.ds = chi.ds;
  out.burn_in = double(nb) * chi.ds;
  Mat x = init.size() ? init : Mat::Zero(model.grid().size(), n * n);
  if (x.rows() != model.grid().size() || x.cols() != n * n)
    throw std::invalid_argument("solve_chi22: initial value has the wrong shape");
  if (nb == 0) {
    out.times.push_back(chi.times[0]);
    out.values.push_back(x);
  }
  Mat psi21(n, n);
  for (Eigen::Index r = 0; r < R; ++r) {
    stepper.set_state(path.state(path.index_at(chi.flux_times[r])));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) psi21(i, j) = chi.flux(r, i * n + j) - aeff(i, j);
    const Mat P = compute_psi22(stepper, chi.values[r + 1], aeff, psi21);
    const double m = P.colwise().mean().cwiseAbs().maxCoeff();
    out.max_psi22_mean = std::max(out.max_psi22_mean, m);
    if (m > 1e-10) throw std::runtime_error("solve_chi22: Psi22 has non-zero mean (inconsistent aeff)");
    stepper.advance_forced(x, P);
    if (r + 1 >= nb) {
      out.times.push_back(chi.times[r + 1]);
      out.values.push_back(x);
      out.sup_l2 = std::max(out.sup_l2, rms(x));
    }
  }
  return out;
}

double fit_decay_rate(const std::vector<double>& times, const std::vector<double>& norms) {
  if (times.size() != norms.size() || norms.empty()) throw std::invalid_argument("fit_decay_rate: bad input");
  const double n0 = norms.front();
  if (n0 == 0.0) return std::numeric_limits<double>::infinity();
  std::vector<double> xs, ys;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    if (norms[k] > 1e-2 * n0 || norms[k] < 1e-11 * n0) continue;
    xs.push_back(times[k]);
    ys.push_back(std::log(norms[k]));
  }
  if (xs.size() < 5) {
    xs.clear();
    ys.clear();
    std::vector<std::size_t> ok;
    for (std::size_t k = 0; k < norms.size(); ++k)
      if (norms[k] >= 1e-11 * n0 && norms[k] > 0) ok.push_back(k);
    for (std::size_t a = ok.size() / 2; a < ok.size(); ++a) {
      xs.push_back(times[ok[a]]);
      ys.push_back(std::log(norms[ok[a]]));
    }
  }
  if (xs.size() < 3) throw std::runtime_error("fit_decay_rate: not enough points above round-off");
  const Eigen::Map<const Eigen::VectorXd> X(xs.data(), Eigen::Index(xs.size()));
  const Eigen::Map<const Eigen::VectorXd> Y(ys.data(), Eigen::Index(ys.size()));
  return -linear_fit(X, Y).slope;
}

InitialLayer solve_initial_layer(const CoefficientModel& model, const DriverPath& path,
                                 const Mat& chi_at_0, double span, Eigen::Index snapshot_stride) {
  const Eigen::Index N = model.grid().size();
  if (chi_at_0.rows() != N) throw std::invalid_argument("solve_initial_layer: grid mismatch");
  const double scale = std::max(1.0, chi_at_0.size() ? chi_at_0.cwiseAbs().maxCoeff() : 0.0);
  if (chi_at_0.size() && chi_at_0.colwise().mean().cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::invalid_argument("solve_initial_layer: initial data must have zero mean");
  const Eigen::Index n0 = path.index_at(0.0);
  const Eigen::Index steps = steps_for(span, path.ds);
  if (n0 + steps > path.size() - 1) throw std::invalid_argument("solve_initial_layer: path too short");

  CellStepper stepper(model);
  InitialLayer il;
  il.grid = model.grid();
  il.ds = path.ds;
  Mat w = -chi_at_0;
  auto record = [&](Eigen::Index k) {
    il.times.push_back(double(k) * path.ds);
    il.l2.push_back(rms(w));
    il.linf.push_back(w.size() ? w.cwiseAbs().maxCoeff() : 0.0);
    il.mean_abs.push_back(w.size() ? w.colwise().mean().cwiseAbs().maxCoeff() : 0.0);
    if (snapshot_stride > 0 && k % snapshot_stride == 0) {
      il.snapshot_times.push_back(double(k) * path.ds);
      il.snapshots.push_back(w);
    }
  };
  record(0);
  for (Eigen::Index k = 0; k < steps; ++k) {
    stepper.set_state(path.state(n0 + k));
    stepper.advance_homogeneous(w);
    record(k + 1);
  }
  il.nu_hat = fit_decay_rate(il.times, il.l2);
  if (!(il.nu_hat > 0)) throw std::runtime_error("solve_initial_layer: fitted decay rate is not positive");
  if (std::isfinite(il.nu_hat)) {
    for (std::size_t k = 0; k < il.times.size(); ++k)
      il.envelope = std::max(il.envelope, il.linf[k] * std::exp(il.nu_hat * il.times[k]));
  }
  return il;
}

Vec solve_elliptic(const FluxOperator<double>& op, const Eigen::Ref<const Vec>& f, double tol,
                   int max_iter, double* residual, int* iterations) {
  const Eigen::Index N = f.size();
  if (max_iter <= 0) max_iter = static_cast<int>(10 * N + 100);
  Vec b = f.array() - f.mean();
  const double bnorm = b.norm();
  Vec x = Vec::Zero(N);
  if (residual) *residual = 0.0;
  if (iterations) *iterations = 0;
  if (bnorm == 0.0) return x;
  Vec r = b, p = r, Kp(N);
  double rr = r.squaredNorm();
  int it = 0;
  for (; it < max_iter && std::sqrt(rr) > tol * bnorm; ++it) {
    Kp = -op.apply(p);
    const double pkp = p.dot(Kp);
    if (!(pkp > 0)) throw std::runtime_error("solve_elliptic: operator is not positive on the mean-zero space");
    const double alpha = rr / pkp;
    x += alpha * p;
    r -= alpha * Kp;
    r.array() -= r.mean();
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  x.array() -= x.mean();
  const double res = (b + op.apply(x)).norm() / bnorm;
  if (residual) *residual = res;
  if (iterations) *iterations = it;
  if (!(res <= std::max(10.0 * tol, 1e-10)))
    throw std::runtime_error("solve_elliptic: conjugate gradients did not converge (residual " +
                             std::to_string(res) + ", ill-conditioned operator)");
  return x;
}

EllipticResult solve_elliptic_corrector(const Field& a, double tol, int max_iter) {
  FluxOperator<double> op(a, true);
  const int n = a.dimension();
  EllipticResult res;
  res.chi = Field(a.grid(), FieldRank::Vector);
  res.aeff = Mat::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double r = 0;
    int it = 0;
    res.chi.component(j) = solve_elliptic(op, op.unit_forcing(j), tol, max_iter, &r, &it);
    res.residual = std::max(res.residual, r);
    res.iterations = std::max(res.iterations, it);
    res.aeff.col(j) = op.flux_mean(res.chi.component(j), j);
  }
  return res;
}

AveragedCorrector solve_averaged_corrector(const CoefficientModel& model, const DriverPath& path) {
  if (path.size() < 2) throw std::invalid_argument("solve_averaged_corrector: path too short");
  AveragedCorrector out;
  out.abar = Field(model.grid(), FieldRank::Matrix);
  Field a(model.grid(), FieldRank::Matrix);
  const Eigen::Index K = path.size() - 1;
  for (Eigen::Index k = 0; k < K; ++k) {
    model.evaluate_into(path.state(k), a);
    out.abar.values() += a.values();
  }
  out.abar.values() /= double(K);
  out.corrector = solve_elliptic_corrector(out.abar);
  return out;
}

JointCorrector solve_joint_corrector_1d(const CoefficientModel& model, double y_half_width, int ny,
                                        double tol) {
  const DriverSpec& d = model.driver();
  if (model.dimension() != 1 || d.dimension != 1 || d.kind != DriverKind::OrnsteinUhlenbeck)
    throw std::invalid_argument("solve_joint_corrector_1d: 1D model with a scalar OU driver expected");
  if (d.degenerate()) throw std::invalid_argument("solve_joint_corrector_1d: driver noise must be non-zero");
  if (ny < 8) throw std::invalid_argument("solve_joint_corrector_1d: too few y cells");
  const double q = 0.5 * d.sigma(0, 0) * d.sigma(0, 0);
  const double sd = std::sqrt(q / d.gamma);
  const double Ly = y_half_width * sd, hy = 2.0 * Ly / ny;
  const int nz = model.grid().resolution();

  JointCorrector jc;
  jc.nz = nz;
  jc.ny = ny;
  jc.y_half_width = Ly;
  jc.y.resize(ny);
  jc.weight.resize(ny);
  auto cdf = [&](double y) { return normal_cdf(y / sd); };
  auto pdf = [&](double y) { return std::exp(-0.5 * y * y / (sd * sd)) / (sd * std::sqrt(2.0 * EIGEN_PI)); };
  double inside = 0;
  for (int m = 0; m < ny; ++m) {
    jc.y(m) = -Ly + (m + 0.5) * hy;
    jc.weight(m) = cdf(jc.y(m) + 0.5 * hy) - cdf(jc.y(m) - 0.5 * hy);
    inside += jc.weight(m);
  }
  jc.outside_mass = 1.0 - inside;
  if (jc.outside_mass > 1e-6)
    throw std::invalid_argument("solve_joint_corrector_1d: invariant mass outside the y window exceeds 1e-6");
  jc.weight /= inside;

  // Assemble K = -W (A + L): z-part per y cell from the flux operator, y-part
  // from the pi-weighted generator with zero flux at both ends.
  const Eigen::Index Ntot = Eigen::Index(nz) * ny;
  auto idx = [&](int k, int m) { return Eigen::Index(m) * nz + k; };
  std::vector<Eigen::Triplet<double>> trip;
  Vec rhs(Ntot);
  std::vector<FluxOperator<double>> ops;
  Field a(model.grid(), FieldRank::Matrix);
  Vec e = Vec::Zero(nz);
  for (int m = 0; m < ny; ++m) {
    model.evaluate_into(Eigen::VectorXd::Constant(1, jc.y(m)), a);
    ops.emplace_back(a, true);
    const double w = jc.weight(m);
    const Vec forcing = ops.back().unit_forcing(0);
    for (int k = 0; k < nz; ++k) rhs(idx(k, m)) = w * forcing(k);
    for (int c = 0; c < nz; ++c) {
      e(c) = 1.0;
      const Vec col = ops.back().apply(e);
      e(c) = 0.0;
      for (int r = 0; r < nz; ++r)
        if (col(r) != 0.0) trip.emplace_back(idx(r, m), idx(c, m), -w * col(r));
    }
  }
  for (int m = 0; m + 1 < ny; ++m) {
    const double yf = -Ly + (m + 1) * hy;
    const double c = q * pdf(yf) / inside / hy;  // face conductance, same normalisation as weights
    for (int k = 0; k < nz; ++k) {
      const Eigen::Index i = idx(k, m), j = idx(k, m + 1);
      trip.emplace_back(i, i, c);
      trip.emplace_back(j, j, c);
      trip.emplace_back(i, j, -c);
      trip.emplace_back(j, i, -c);
    }
  }
  Eigen::SparseMatrix<double> Kmat(Ntot, Ntot);
  Kmat.setFromTriplets(trip.begin(), trip.end());

  // Jacobi-preconditioned CG; the kernel (constants) is orthogonal to rhs.
  const Vec dinv = Kmat.diagonal().cwiseInverse();
  Vec x = Vec::Zero(Ntot), r = rhs, z = dinv.cwiseProduct(r), p = z, Kp(Ntot);
  const double bnorm = rhs.norm();
  double rz = r.dot(z);
  int it = 0;
  const int max_iter = static_cast<int>(20 * Ntot);
  if (bnorm > 0) {
    for (; it < max_iter && r.norm() > tol * bnorm; ++it) {
      Kp = Kmat * p;
      const double alpha = rz / p.dot(Kp);
      x += alpha * p;
      r -= alpha * Kp;
      z = dinv.cwiseProduct(r);
      const double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    jc.residual = (rhs - Kmat * x).norm() / bnorm;
    if (!(jc.residual <= 10 * tol))
      throw std::runtime_error("solve_joint_corrector_1d: conjugate gradients did not converge");
  }
  jc.iterations = it;
  // Gauge: zero mean under dz x pi(y) dy.
  double gauge = 0;
  for (int m = 0; m < ny; ++m) gauge += jc.weight(m) * x.segment(Eigen::Index(m) * nz, nz).mean();
  x.array() -= gauge;
  jc.chi = Eigen::Map<Mat>(x.data(), nz, ny);
  jc.aeff = 0;
  for (int m = 0; m < ny; ++m) jc.aeff += jc.weight(m) * ops[m].flux_mean(jc.chi.col(m), 0)(0);
  return jc;
}

}  // namespace parahom
