#include "parahom/pde.hpp"

#include "parahom/stats.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <random>

namespace parahom {

namespace {

using cplx = std::complex<double>;

bool near_integer(double v, double tol = 1e-9) {
  return std::abs(v - std::round(v)) <= tol * std::max(1.0, std::abs(v));
}

// Wavenumbers of the periodic box in FFT order.
Vec wavenumbers(const SpatialDomain& d) {
  const Eigen::Index P = d.intervals;
  Vec k(P);
  const double base = 2.0 * EIGEN_PI / (2.0 * d.half_width);
  for (Eigen::Index m = 0; m < P; ++m) k(m) = base * double(m < P / 2 ? m : m - P);
  return k;
}

// (i kappa)^p with the Nyquist mode dropped for odd p.
cplx derivative_symbol(double kappa, int p, bool nyquist) {
  if (p == 0) return 1.0;
  if (nyquist && (p % 2 == 1)) return 0.0;
  cplx s = 1.0;
  for (int q = 0; q < p; ++q) s *= cplx(0.0, kappa);
  return s;
}

Eigen::VectorXcd forward_fft(const Vec& v) {
  Eigen::FFT<double> fft;
  std::vector<double> in(v.data(), v.data() + v.size());
  std::vector<cplx> out;
  fft.fwd(out, in);
  return Eigen::Map<Eigen::VectorXcd>(out.data(), Eigen::Index(out.size()));
}

Vec inverse_fft_real(const Eigen::VectorXcd& c) {
  Eigen::FFT<double> fft;
  std::vector<cplx> in(c.data(), c.data() + c.size()), out;
  fft.inv(out, in);
  Vec v(c.size());
  for (Eigen::Index m = 0; m < c.size(); ++m) v(m) = out[m].real();
  return v;
}

Eigen::VectorXcd sample_spectrum(const InitialData& g, const SpatialDomain& d) {
  Vec s(d.intervals);
  for (Eigen::Index m = 0; m < d.intervals; ++m) s(m) = g(d.node(m));
  return forward_fft(s);
}

void require_periodic(const SpatialDomain& d, const char* who) {
  if (!d.periodic) throw std::invalid_argument(std::string(who) + ": periodic spectral domain expected");
  if (d.intervals < 8 || d.intervals % 2) throw std::invalid_argument(std::string(who) + ": need an even number of points >= 8");
}

std::vector<Eigen::Index> record_steps(Eigen::Index steps, Eigen::Index stride) {
  std::vector<Eigen::Index> r{0};
  if (stride > 0)
    for (Eigen::Index k = stride; k < steps; k += stride) r.push_back(k);
  if (steps > 0) r.push_back(steps);
  return r;
}

// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
void gauss_legendre(int n, Vec& nodes, Vec& weights) {
  Mat J = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double b = k / std::sqrt(4.0 * k * k - 1.0);
    J(k, k - 1) = J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  nodes = es.eigenvalues();
  weights = 2.0 * es.eigenvectors().row(0).transpose().array().square();
}

Mat test_matrix(const std::vector<std::function<double(double)>>& fs, const Vec& x) {
  Mat Phi(x.size(), Eigen::Index(fs.size()));
  for (std::size_t k = 0; k < fs.size(); ++k)
    for (Eigen::Index m = 0; m < x.size(); ++m) Phi(m, Eigen::Index(k)) = fs[k](x(m));
  return Phi;
}

const Mat& lookup(const std::vector<double>& times, const std::vector<Mat>& values, double ds,
                  double s, const char* who) {
  if (times.empty()) throw std::invalid_argument(std::string(who) + ": empty trajectory");
  const double r = (s - times.front()) / ds;
  const auto idx = static_cast<long long>(std::llround(r));
  if (idx < 0 || idx >= static_cast<long long>(times.size()) ||
      std::abs(times[std::size_t(idx)] - s) > 1e-6 * ds)
    throw std::invalid_argument(std::string(who) + ": trajectory does not cover s = " + std::to_string(s));
  return values[std::size_t(idx)];
}

Eigen::Index series_row(const std::vector<double>& times, double ds, double s, const char* who) {
  if (times.empty()) throw std::invalid_argument(std::string(who) + ": empty series");
  const auto idx = static_cast<long long>(std::llround((s - times.front()) / ds));
  if (idx < 0 || idx >= static_cast<long long>(times.size()) ||
      std::abs(times[std::size_t(idx)] - s) > 1e-6 * ds)
    throw std::invalid_argument(std::string(who) + ": series does not cover s = " + std::to_string(s));
  return Eigen::Index(idx);
}

}  // namespace

Vec SpatialDomain::nodes() const {
  Vec x(points());
  for (Eigen::Index m = 0; m < x.size(); ++m) x(m) = node(m);
  return x;
}

SpatialDomain SpatialDomain::fine(double half_width, double eps, int cell_nodes) {
  if (!(half_width > 0) || !(eps > 0)) throw std::invalid_argument("SpatialDomain: L and eps must be positive");
  if (cell_nodes < 16) throw ResolutionError("SpatialDomain: eps-cell has fewer than 16 nodes");
  const double half = half_width * cell_nodes / eps;
  if (!near_integer(half))
    throw std::invalid_argument("SpatialDomain: L M / eps must be an integer so nodes sit on the torus grid");
  SpatialDomain d;
  d.half_width = half_width;
  d.intervals = 2 * static_cast<Eigen::Index>(std::llround(half));
  d.periodic = false;
  return d;
}

SpatialDomain SpatialDomain::spectral(double half_width, Eigen::Index points) {
  SpatialDomain d;
  d.half_width = half_width;
  d.intervals = points;
  d.periodic = true;
  return d;
}

double hermite(int k, double y) {
  if (k < 0 || k > 6) throw std::invalid_argument("hermite: order out of range");
  double h0 = 1.0, h1 = y;
  if (k == 0) return h0;
  for (int q = 1; q < k; ++q) {
    const double h2 = y * h1 - q * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

double heat_gaussian(const GaussianBump& g, double a, double x, double t, int order) {
  const double s2 = g.width * g.width + 2.0 * a * t;
  const double s = std::sqrt(s2);
  const double y = (x - g.centre) / s;
  const double base = g.amplitude * (g.width / s) * std::exp(-0.5 * y * y);
  const double sign = (order % 2) ? -1.0 : 1.0;
  return sign * std::pow(s, -order) * hermite(order, y) * base;
}

InitialData InitialData::gaussian(double amplitude, double centre, double width) {
  if (!(width > 0)) throw std::invalid_argument("InitialData: width must be positive");
  GaussianBump b{amplitude, centre, width};
  InitialData d([b](double x, int order) { return heat_gaussian(b, 0.0, x, 0.0, order); });
  d.gaussian_ = true;
  d.bump_ = b;
  return d;
}

Vec InitialData::decay_constants(int K, double r, int samples) const {
  Vec c = Vec::Zero(5);
  for (int i = 0; i < samples; ++i) {
    const double x = -r + 2.0 * r * i / (samples - 1);
    const double w = std::pow(1.0 + std::abs(x), K);
    for (int k = 0; k <= 4; ++k) c(k) = std::max(c(k), std::abs(f_(x, k)) * w);
  }
  return c;
}

double InitialData::tail_mass(double r, double outer, int samples) const {
  if (!(outer > r)) return 0.0;
  const double h = (outer - r) / (samples - 1);
  double m = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = r + i * h;
    const double w = (i == 0 || i == samples - 1) ? 0.5 : 1.0;
    m += w * h * (std::abs(f_(x, 0)) + std::abs(f_(-x, 0)));
  }
  return m;
}

double SolutionField::l2_at(Eigen::Index j) const {
  return std::sqrt(domain.spacing() * values.col(j).squaredNorm());
}

double SolutionField::l2_space_time() const {
  double acc = 0;
  for (Eigen::Index j = 0; j + 1 < samples(); ++j) {
    const double dt = times[std::size_t(j + 1)] - times[std::size_t(j)];
    acc += 0.5 * dt * domain.spacing() * (values.col(j).squaredNorm() + values.col(j + 1).squaredNorm());
  }
  return std::sqrt(acc);
}

HomogenizedProfile::HomogenizedProfile(double aeff, const InitialData& g, const SpatialDomain& domain)
    : aeff_(aeff), g_(g), domain_(domain), x_(domain.nodes()) {
  if (!(aeff > 0) || !std::isfinite(aeff)) throw std::invalid_argument("solve_u0: aeff must be positive definite");
  if (!g_.is_gaussian()) {
    if (domain.intervals < 8 || domain.intervals % 2)
      throw std::invalid_argument("solve_u0: spectral route needs an even number of intervals >= 8");
    ghat_ = sample_spectrum(g_, domain_);
    kappa_ = wavenumbers(domain_);
  }
}

void HomogenizedProfile::evaluate(double t, int max_order, Mat& out) const {
  if (max_order < 0 || max_order > 4) throw std::invalid_argument("HomogenizedProfile: order out of range");
  const Eigen::Index P = x_.size();
  out.resize(P, max_order + 1);
  if (g_.is_gaussian()) {
    const GaussianBump& b = g_.bump();
    const double s2 = b.width * b.width + 2.0 * aeff_ * t;
    const double s = std::sqrt(s2), is = 1.0 / s;
    const double amp = b.amplitude * b.width * is;
    // exp(-y^2/2) on the uniform grid by the ratio recurrence
    // e_{m+1} = e_m q_m, q_{m+1} = q_m exp(-dy^2), restarted every 32 nodes.
    const double dy = domain_.spacing() * is, qq = std::exp(-dy * dy);
    double e = 0, q = 0;
    for (Eigen::Index m = 0; m < P; ++m) {
      const double y = (x_(m) - b.centre) * is;
      if (m % 32 == 0) {
        e = amp * std::exp(-0.5 * y * y);
        q = std::exp(-y * dy - 0.5 * dy * dy);
      } else {
        e *= q;
        q *= qq;
      }
      double h0 = 1.0, h1 = y, scale = 1.0;
      out(m, 0) = e;
      for (int p = 1; p <= max_order; ++p) {
        scale *= -is;
        out(m, p) = scale * h1 * e;
        const double h2 = y * h1 - p * h0;
        h0 = h1;
        h1 = h2;
      }
    }
    return;
  }
  const Eigen::Index Q = domain_.intervals;
  for (int p = 0; p <= max_order; ++p) {
    Eigen::VectorXcd c(Q);
    for (Eigen::Index m = 0; m < Q; ++m)
      c(m) = ghat_(m) * derivative_symbol(kappa_(m), p, m == Q / 2) *
             std::exp(-aeff_ * kappa_(m) * kappa_(m) * t);
    const Vec v = inverse_fft_real(c);
    out.col(p).head(Q) = v;
    if (P > Q) out(P - 1, p) = v(0);
  }
}

Mat HomogenizedProfile::evaluate(double t, int max_order) const {
  Mat out;
  evaluate(t, max_order, out);
  return out;
}

U0Fields solve_u0(double aeff, const InitialData& g, const SpatialDomain& domain,
                  const std::vector<double>& times) {
  HomogenizedProfile prof(aeff, g, domain);
  U0Fields f;
  f.closed_form = prof.closed_form();
  SolutionField* parts[4] = {&f.u, &f.d1, &f.d2, &f.d3};
  const char* names[4] = {"u0", "d1 u0", "d2 u0", "d3 u0"};
  for (int p = 0; p < 4; ++p) {
    parts[p]->equation = names[p];
    parts[p]->domain = domain;
    parts[p]->times = times;
    parts[p]->values.resize(domain.points(), Eigen::Index(times.size()));
  }
  Mat D;
  for (std::size_t j = 0; j < times.size(); ++j) {
    prof.evaluate(times[j], 3, D);
    for (int p = 0; p < 4; ++p) parts[p]->values.col(Eigen::Index(j)) = D.col(p);
  }
  return f;
}

FineResult solve_fine(const CoefficientModel& model, const DriverPath& path, double eps,
                      const InitialData& g, const SpatialDomain& domain, double T,
                      const FineCoupling& cp, const FineOptions& opt) {
  if (model.dimension() != 1) throw std::invalid_argument("solve_fine: one-dimensional model expected");
  if (domain.periodic) throw std::invalid_argument("solve_fine: Dirichlet domain expected");
  if (!(eps > 0) || !(T > 0)) throw std::invalid_argument("solve_fine: eps and T must be positive");
  const int M = model.grid().resolution();
  const double h = domain.spacing();
  if (M < 16 || h > eps / 16.0 * (1 + 1e-12))
    throw ResolutionError("solve_fine: eps-cell has fewer than 16 nodes");
  if (std::abs(h * M - eps) > 1e-10 * eps)
    throw ResolutionError("solve_fine: fine spacing must equal eps / M for nearest-node lookup");
  const double half = domain.half_width * M / eps;
  if (!near_integer(half)) throw std::invalid_argument("solve_fine: L M / eps must be an integer");
  const long long off0 = std::llround(half);

  const double ds = model.driver().ds;
  if (std::abs(path.ds - ds) > 1e-15 * ds) throw std::invalid_argument("solve_fine: path step differs from the model's");
  const double dt = eps * eps * ds;
  const Eigen::Index steps = static_cast<Eigen::Index>(std::llround(T / dt));
  if (std::abs(double(steps) * dt - T) > 1e-9 * T)
    throw std::invalid_argument("solve_fine: T must be a multiple of eps^2 ds");
  const Eigen::Index n0 = path.index_at(0.0);
  if (std::abs(path.time(n0)) > 1e-9 * ds) throw std::invalid_argument("solve_fine: path has no node at s = 0");
  if (n0 + steps > path.size() - 1) throw std::invalid_argument("solve_fine: driver path does not cover [0, T / eps^2]");

  const bool with_u0 = cp.aeff > 0;
  if ((opt.solve_v || opt.solve_xi1 || opt.solve_xi2) && !with_u0)
    throw std::invalid_argument("solve_fine: forced problems need aeff");
  if (opt.solve_v && !cp.psi21) throw std::invalid_argument("solve_fine: V needs the Psi21 series");
  if (opt.solve_xi1 && (!cp.chi || !cp.chi22)) throw std::invalid_argument("solve_fine: Xi1 needs chi and chi22");
  const bool with_U = opt.solve_u && with_u0 && cp.chi;

  const Eigen::Index P = domain.points();
  const Vec x = domain.nodes();
  std::vector<int> tix(static_cast<std::size_t>(P));
  for (Eigen::Index m = 0; m < P; ++m) tix[std::size_t(m)] = int(((m - off0) % M + M) % M);
  const Mat Phi = test_matrix(opt.test_functions, x);
  const Eigen::Index nphi = Phi.cols();
  std::vector<char> outer(static_cast<std::size_t>(P));
  for (Eigen::Index m = 0; m < P; ++m) outer[std::size_t(m)] = std::abs(x(m)) > 0.9 * domain.half_width;

  FineResult res;
  res.eps = eps;
  res.dt = dt;
  res.steps = steps;
  res.proj_U = Vec::Zero(nphi);
  res.proj_chi_term = Vec::Zero(nphi);

  Vec u = Vec::Zero(P), v = Vec::Zero(P), x1 = Vec::Zero(P), x2 = Vec::Zero(P);
  for (Eigen::Index m = 1; m + 1 < P; ++m) u(m) = g(x(m));
  const double gmax = u.maxCoeff(), gmin = u.minCoeff();
  const double mass0 = h * u.sum();
  double energy_prev = u.norm();

  std::unique_ptr<HomogenizedProfile> prof;
  if (with_u0) prof = std::make_unique<HomogenizedProfile>(cp.aeff, g, domain);
  Mat D;
  double D_time = -1.0;
  auto profile_at = [&](double t) {
    if (t != D_time) {
      prof->evaluate(t, 3, D);
      D_time = t;
    }
  };
  Vec chif(P), diff(P), Uv(P), f(P);
  double chi21 = 0.0;
  double acc_plain = 0, acc_corr = 0, acc_U = 0, acc_v = 0, acc_c21 = 0, acc_vrem = 0;
  double acc_x1 = 0, acc_x2 = 0, acc_x02 = 0, acc_gap = 0;

  // Snapshot schedule.
  std::vector<Eigen::Index> snaps;
  if (opt.snapshots > 0) {
    for (Eigen::Index q = 0; q <= opt.snapshots; ++q) snaps.push_back(Eigen::Index(std::llround(double(steps) * q / opt.snapshots)));
    snaps.erase(std::unique(snaps.begin(), snaps.end()), snaps.end());
  } else {
    snaps = {0, steps};
  }
  auto init_field = [&](SolutionField& s, const char* name, bool on) {
    if (!on) return;
    s.equation = name;
    s.eps = eps;
    s.seed = path.seed;
    s.domain = domain;
    s.values.resize(P, Eigen::Index(snaps.size()));
  };
  init_field(res.u, "u_eps", opt.solve_u);
  init_field(res.v, "V_eps1", opt.solve_v);
  init_field(res.xi1, "Xi_eps1", opt.solve_xi1);
  init_field(res.xi2, "Xi_eps2", opt.solve_xi2);
  init_field(res.U, "U_eps", with_U);
  std::size_t next_snap = 0;

  auto observe = [&](Eigen::Index j) {
    const double t = double(j) * dt;
    const double wt = (j == 0 || j == steps) ? 0.5 * dt : dt;
    const double s = path.time(n0 + j);
    if (with_u0) profile_at(t);
    if (opt.solve_u) {
      const double mass = h * u.sum();
      res.mass_defect = std::max(res.mass_defect, std::abs(mass - mass0));
      res.max_principle_excess = std::max({res.max_principle_excess, u.maxCoeff() - gmax, gmin - u.minCoeff()});
      const double e = u.norm();
      res.energy_increase = std::max(res.energy_increase, (e - energy_prev) / std::max(energy_prev, 1e-300));
      energy_prev = e;
      if (j % 64 == 0 || j == steps) {
        double bm = 0;
        for (Eigen::Index m = 0; m < P; ++m)
          if (outer[std::size_t(m)]) bm += std::abs(u(m));
        res.boundary_mass = std::max(res.boundary_mass, h * bm);
      }
      if (with_u0) {
        diff = u - D.col(0);
        acc_plain += wt * h * diff.squaredNorm();
      }
    }
    if (with_U) {
      const Mat& c = lookup(cp.chi->times, cp.chi->values, ds, s, "solve_fine: chi");
      for (Eigen::Index m = 0; m < P; ++m) chif(m) = c(tix[std::size_t(m)], 0);
      chif.array() *= D.col(1).array();  // chi d u0
      acc_corr += wt * h * (diff - eps * chif).squaredNorm();
      Uv = diff / eps - chif;
      acc_U += wt * h * Uv.squaredNorm();
      if (nphi) {
        res.proj_U += wt * h * (Phi.transpose() * Uv);
        res.proj_chi_term += wt * h * (Phi.transpose() * chif);
      }
    }
    if (opt.solve_v) {
      acc_v += wt * h * v.squaredNorm() / (eps * eps);
      acc_c21 += wt * h * eps * eps * chi21 * chi21 * D.col(2).squaredNorm();
      acc_vrem += wt * h * (v / eps - eps * chi21 * D.col(2)).squaredNorm();
    }
    if (opt.solve_xi1) acc_x1 += wt * h * x1.squaredNorm();
    if (opt.solve_xi2) {
      acc_x2 += wt * h * x2.squaredNorm();
      acc_x02 += wt * h * t * t * cp.mu * cp.mu * D.col(3).squaredNorm();
      acc_gap += wt * h * (x2 - t * cp.mu * D.col(3)).squaredNorm();
    }
    if (next_snap < snaps.size() && snaps[next_snap] == j) {
      const Eigen::Index c = Eigen::Index(next_snap);
      if (opt.solve_u) { res.u.values.col(c) = u; res.u.times.push_back(t); }
      if (opt.solve_v) { res.v.values.col(c) = v; res.v.times.push_back(t); }
      if (opt.solve_xi1) { res.xi1.values.col(c) = x1; res.xi1.times.push_back(t); }
      if (opt.solve_xi2) { res.xi2.values.col(c) = x2; res.xi2.times.push_back(t); }
      if (with_U) { res.U.values.col(c) = Uv; res.U.times.push_back(t); }
      ++next_snap;
    }
  };

  CellStepper stepper(model);
  const double r = dt / (h * h);
  Vec cprime = Vec::Zero(P), inv = Vec::Zero(P), sub = Vec::Zero(P);
  std::vector<double*> active;
  // Thomas sweep for (I - dt L) w^+ = w on every active field, Dirichlet
  // ends held at zero. The coefficients repeat with period M, so once the
  // pivots have converged to a periodic sequence (to round-off) they are
  // copied instead of recomputed.
  auto sweep = [&](const Vec& A) {
    Eigen::Index m = 1, settled = P - 1;
    for (; m + 1 < P; ++m) {
      const double al = A(tix[std::size_t(m - 1)]), ar = A(tix[std::size_t(m)]);
      sub(m) = -r * al;
      inv(m) = 1.0 / (1.0 + r * (al + ar) - sub(m) * cprime(m - 1));
      cprime(m) = -r * ar * inv(m);
      if (m > 2 * M && std::abs(inv(m) - inv(m - M)) <= 1e-16 * inv(m) &&
          std::abs(cprime(m) - cprime(m - M)) <= 1e-16 * std::abs(cprime(m))) {
        bool periodic = true;
        for (Eigen::Index k = m - M + 1; k < m && periodic; ++k)
          periodic = inv(k) == inv(k - M) || std::abs(inv(k) - inv(k - M)) <= 1e-16 * inv(k);
        if (periodic) {
          settled = m + 1;
          break;
        }
      }
    }
    for (Eigen::Index k = settled; k + 1 < P; ++k) {
      inv(k) = inv(k - M);
      cprime(k) = cprime(k - M);
      sub(k) = sub(k - M);
    }
    for (double* w : active) {
      for (Eigen::Index k = 1; k + 1 < P; ++k) w[k] = (w[k] - sub(k) * w[k - 1]) * inv(k);
      for (Eigen::Index k = P - 2; k >= 1; --k) w[k] -= cprime(k) * w[k + 1];
    }
  };
  Vec psi3;
  observe(0);
  for (Eigen::Index n = 0; n < steps; ++n) {
    stepper.set_state(path.state(n0 + n));
    const double s_next = path.time(n0 + n + 1);
    const double t_next = double(n + 1) * dt;
    if (with_u0 && (opt.solve_v || opt.solve_xi1 || opt.solve_xi2)) profile_at(t_next);
    active.clear();
    auto add_forced = [&](Vec& w, const Vec& forcing) {
      w.segment(1, P - 2) += dt * forcing.segment(1, P - 2);
      active.push_back(w.data());
    };
    if (opt.solve_u) active.push_back(u.data());
    if (opt.solve_v) {
      const Eigen::Index row = series_row(cp.psi21->times, ds, path.time(n0 + n), "solve_fine: psi21");
      const double psi = cp.psi21->values(row, 0);
      f = psi * D.col(2);
      add_forced(v, f);
      chi21 += ds * psi;
    }
    if (opt.solve_xi1) {
      const Mat& c = lookup(cp.chi->times, cp.chi->values, ds, s_next, "solve_fine: chi");
      const Mat& c22 = lookup(cp.chi22->times, cp.chi22->values, ds, s_next, "solve_fine: chi22");
      psi3 = stepper.psi3_1d(c, c22, cp.aeff);
      for (Eigen::Index m = 0; m < P; ++m) f(m) = (psi3(tix[std::size_t(m)]) - cp.mu) * D(m, 3);
      add_forced(x1, f);
    }
    if (opt.solve_xi2) {
      f = cp.mu * D.col(3);
      add_forced(x2, f);
    }
    sweep(stepper.op().face_coefficient(0));
    observe(n + 1);
  }
  res.u_minus_u0 = std::sqrt(acc_plain);
  res.u_minus_corrected = std::sqrt(acc_corr);
  res.U_norm = std::sqrt(acc_U);
  res.v_scaled = std::sqrt(acc_v);
  res.chi21_term = std::sqrt(acc_c21);
  res.v_remainder = std::sqrt(acc_vrem);
  res.xi1_norm = std::sqrt(acc_x1);
  res.xi2_norm = std::sqrt(acc_x2);
  res.xi02_norm = std::sqrt(acc_x02);
  res.xi2_gap = std::sqrt(acc_gap);
  if (!u.allFinite() || !v.allFinite() || !x1.allFinite() || !x2.allFinite())
    throw std::runtime_error("solve_fine: non-finite values");
  if (opt.solve_u && res.boundary_mass > opt.boundary_tol)
    throw BoundaryContaminationError("solve_fine: solution mass near the boundary " +
                                     std::to_string(res.boundary_mass) + " exceeds tolerance; enlarge L");
  return res;
}

SolutionField solve_u_eps(const CoefficientModel& model, const DriverPath& path, double eps,
                          const InitialData& g, const SpatialDomain& domain, double T,
                          Eigen::Index snapshots) {
  FineOptions o;
  o.snapshots = snapshots;
  return solve_fine(model, path, eps, g, domain, T, FineCoupling{}, o).u;
}

SolutionField solve_V_eps1(const CoefficientModel& model, const DriverPath& path, double eps,
                           const FluctuationSeries& psi21, double aeff, const InitialData& g,
                           const SpatialDomain& domain, double T, Eigen::Index snapshots) {
  FineCoupling c;
  c.aeff = aeff;
  c.psi21 = &psi21;
  FineOptions o;
  o.solve_u = false;
  o.solve_v = true;
  o.snapshots = snapshots;
  return solve_fine(model, path, eps, g, domain, T, c, o).v;
}

SolutionField solve_xi_eps1(const CoefficientModel& model, const DriverPath& path, double eps,
                            double mu, const CorrectorTrajectory& chi,
                            const Chi22Trajectory& chi22, double aeff, const InitialData& g,
                            const SpatialDomain& domain, double T, Eigen::Index snapshots) {
  FineCoupling c;
  c.aeff = aeff;
  c.mu = mu;
  c.chi = &chi;
  c.chi22 = &chi22;
  FineOptions o;
  o.solve_u = false;
  o.solve_xi1 = true;
  o.snapshots = snapshots;
  return solve_fine(model, path, eps, g, domain, T, c, o).xi1;
}

SolutionField solve_xi_eps2(const CoefficientModel& model, const DriverPath& path, double eps,
                            double mu, double aeff, const InitialData& g,
                            const SpatialDomain& domain, double T, Eigen::Index snapshots) {
  FineCoupling c;
  c.aeff = aeff;
  c.mu = mu;
  FineOptions o;
  o.solve_u = false;
  o.solve_xi2 = true;
  o.snapshots = snapshots;
  return solve_fine(model, path, eps, g, domain, T, c, o).xi2;
}

AssembledU assemble_U_eps(const SolutionField& u_eps, const HomogenizedProfile& u0,
                          const CorrectorTrajectory& chi, double eps) {
  if (chi.grid.dimension() != 1) throw std::invalid_argument("assemble_U_eps: 1D corrector expected");
  const SpatialDomain& d = u_eps.domain;
  const int M = chi.grid.resolution();
  if (std::abs(d.spacing() * M - eps) > 1e-10 * eps)
    throw std::invalid_argument("assemble_U_eps: grid spacing must equal eps / M");
  const long long off0 = std::llround(d.half_width * M / eps);
  const double ds = chi.ds;
  AssembledU out;
  out.U = u_eps;
  out.U.equation = "U_eps";
  Mat D;
  const Eigen::Index P = d.points();
  SolutionField diff = u_eps;
  for (Eigen::Index j = 0; j < u_eps.samples(); ++j) {
    const double t = u_eps.times[std::size_t(j)];
    const double s = t / (eps * eps);
    const double snapped = std::round(s / ds) * ds;
    if (std::abs(snapped - s) > 1e-6 * ds) throw std::invalid_argument("assemble_U_eps: time grid mismatch");
    const Mat& c = lookup(chi.times, chi.values, ds, snapped, "assemble_U_eps: chi");
    u0.evaluate(t, 1, D);
    if (D.rows() != P) throw std::invalid_argument("assemble_U_eps: profile grid mismatch");
    for (Eigen::Index m = 0; m < P; ++m) {
      const int k = int(((m - off0) % M + M) % M);
      const double dv = u_eps.values(m, j) - D(m, 0);
      diff.values(m, j) = dv;
      out.U.values(m, j) = dv / eps - c(k, 0) * D(m, 1);
    }
  }
  out.u_minus_u0 = diff.l2_space_time();
  return out;
}

WienerPath WienerPath::aggregate(Eigen::Index factor) const {
  if (factor < 1 || steps() % factor) throw std::invalid_argument("WienerPath: factor must divide the step count");
  WienerPath w;
  w.dimension = dimension;
  w.dt = dt * double(factor);
  w.seed = seed;
  w.increments = Mat::Zero(steps() / factor, dimension);
  for (Eigen::Index k = 0; k < steps(); ++k) w.increments.row(k / factor) += increments.row(k);
  return w;
}

Vec WienerPath::value(Eigen::Index k) const {
  if (k < 0 || k > steps()) throw std::out_of_range("WienerPath: step out of range");
  return k == 0 ? Vec::Zero(dimension) : Vec(increments.topRows(k).colwise().sum().transpose());
}

WienerPath sample_wiener(int dimension, double T, double dt, std::uint64_t seed) {
  if (dimension < 1 || !(T > 0) || !(dt > 0)) throw std::invalid_argument("sample_wiener: bad arguments");
  const Eigen::Index steps = static_cast<Eigen::Index>(std::llround(T / dt));
  if (steps < 1 || std::abs(double(steps) * dt - T) > 1e-9 * T)
    throw std::invalid_argument("sample_wiener: T must be a multiple of dt");
  WienerPath w;
  w.dimension = dimension;
  w.dt = dt;
  w.seed = seed;
  w.increments.resize(steps, dimension);
  auto rng = make_rng(seed, 11);
  std::normal_distribution<double> normal(0.0, std::sqrt(dt));
  for (Eigen::Index k = 0; k < steps; ++k)
    for (int c = 0; c < dimension; ++c) w.increments(k, c) = normal(rng);
  if (steps >= 64) {
    for (int c = 0; c < dimension; ++c) {
      const Moments mo = moments(w.increments.col(c));
      const double zm = mo.mean / std::sqrt(dt / double(steps));
      const double zv = (mo.variance / dt - 1.0) / std::sqrt(2.0 / double(steps));
      if (std::abs(zm) > 6 || std::abs(zv) > 6)
        throw std::runtime_error("sample_wiener: increments fail the moment check");
    }
  }
  return w;
}

namespace {

struct SpectralSetup {
  Eigen::VectorXcd ghat;
  Vec kappa;
  Eigen::MatrixXcd phi;                 // modes x functions, conj(phi_hat) h / P
};

SpectralSetup spectral_setup(const InitialData& g, const SpatialDomain& d,
                             const std::vector<std::function<double(double)>>& tests) {
  SpectralSetup s;
  s.ghat = sample_spectrum(g, d);
  s.kappa = wavenumbers(d);
  const Eigen::Index P = d.intervals;
  s.phi.resize(P, Eigen::Index(tests.size()));
  for (std::size_t k = 0; k < tests.size(); ++k) {
    Vec v(P);
    for (Eigen::Index m = 0; m < P; ++m) v(m) = tests[k](d.node(m));
    s.phi.col(Eigen::Index(k)) = forward_fft(v).conjugate() * (d.spacing() / double(P));
  }
  return s;
}

SolutionField spectral_field(const char* name, const SpatialDomain& d, std::size_t samples) {
  SolutionField f;
  f.equation = name;
  f.domain = d;
  f.values.resize(d.points(), Eigen::Index(samples));
  return f;
}

// Shared stepper for Xi_{0,2} and the SPDE: noise == nullptr gives Xi_{0,2}.
SPDEPath march_spectral(const char* name, double aeff, double mu, double lambda_half, const InitialData& g,
                        const SpatialDomain& d, double dt, Eigen::Index steps, const Mat* noise,
                        const SpectralOptions& opts) {
  if (!(aeff > 0)) throw std::invalid_argument(std::string(name) + ": aeff must be positive");
  const SpectralSetup S = spectral_setup(g, d, opts.test_functions);
  const Eigen::Index P = d.intervals;
  const Eigen::Index nphi = S.phi.cols();
  Eigen::VectorXcd c3(P), c2(P), U = Eigen::VectorXcd::Zero(P);
  Vec decay(P), implicit(P);
  for (Eigen::Index m = 0; m < P; ++m) {
    const double k2 = S.kappa(m) * S.kappa(m);
    c3(m) = S.ghat(m) * derivative_symbol(S.kappa(m), 3, m == P / 2);
    c2(m) = S.ghat(m) * derivative_symbol(S.kappa(m), 2, m == P / 2);
    decay(m) = aeff * k2;
    implicit(m) = 1.0 / (1.0 + dt * aeff * k2);
  }
  const std::vector<Eigen::Index> rec = record_steps(steps, opts.stride);
  SPDEPath out;
  out.U = spectral_field(name, d, rec.size());
  out.projections = Vec::Zero(nphi);
  std::size_t next = 0;
  auto observe = [&](Eigen::Index k) {
    if (nphi) {
      const double w = (k == 0 || k == steps) ? 0.5 * dt : dt;
      out.projections += w * (S.phi.transpose() * U).real();
    }
    if (next < rec.size() && rec[next] == k) {
      out.U.times.push_back(double(k) * dt);
      out.U.values.col(Eigen::Index(next)) = inverse_fft_real(U);
      ++next;
    }
  };
  observe(0);
  for (Eigen::Index n = 0; n < steps; ++n) {
    const double t = double(n) * dt;
    const double dw = noise ? lambda_half * (*noise)(n, 0) : 0.0;
    for (Eigen::Index m = 0; m < P; ++m) {
      const double e = std::exp(-decay(m) * t);
      U(m) = (U(m) + (dt * mu * c3(m) + dw * c2(m)) * e) * implicit(m);
    }
    observe(n + 1);
  }
  if (!out.U.finite()) throw std::runtime_error(std::string(name) + ": non-finite values");
  return out;
}

}  // namespace

SolutionField solve_xi02(double aeff, double mu, const InitialData& g, const SpatialDomain& domain,
                         double T, double dt, const SpectralOptions& opts) {
  require_periodic(domain, "solve_xi02");
  if (!(T > 0) || !(dt > 0)) throw std::invalid_argument("solve_xi02: T and dt must be positive");
  const Eigen::Index steps = static_cast<Eigen::Index>(std::llround(T / dt));
  if (std::abs(double(steps) * dt - T) > 1e-9 * T) throw std::invalid_argument("solve_xi02: T must be a multiple of dt");
  return march_spectral("Xi_02", aeff, mu, 0.0, g, domain, dt, steps, nullptr, opts).U;
}

SolutionField xi02_duhamel(double aeff, double mu, const InitialData& g, const SpatialDomain& domain,
                           const std::vector<double>& times, int quadrature_nodes) {
  require_periodic(domain, "xi02_duhamel");
  const Eigen::Index P = domain.intervals;
  const Eigen::VectorXcd ghat = sample_spectrum(g, domain);
  const Vec kappa = wavenumbers(domain);
  Vec gx, gw;
  gauss_legendre(quadrature_nodes, gx, gw);
  SolutionField f = spectral_field("Xi_02 (Duhamel)", domain, times.size());
  f.times = times;
  for (std::size_t j = 0; j < times.size(); ++j) {
    const double t = times[j];
    Eigen::VectorXcd c(P);
    for (Eigen::Index m = 0; m < P; ++m) {
      const double b = aeff * kappa(m) * kappa(m);
      double integral = 0;
      for (int q = 0; q < quadrature_nodes; ++q) {
        const double tau = 0.5 * t * (gx(q) + 1.0);
        integral += 0.5 * t * gw(q) * std::exp(-b * (t - tau)) * std::exp(-b * tau);
      }
      c(m) = mu * ghat(m) * derivative_symbol(kappa(m), 3, m == P / 2) * integral;
    }
    f.values.col(Eigen::Index(j)) = inverse_fft_real(c);
  }
  return f;
}

SPDEPath solve_spde(double aeff, double mu, const Mat& lambda_sqrt, const InitialData& g,
                    const SpatialDomain& domain, double T, const WienerPath& wiener,
                    const SpectralOptions& opts) {
  require_periodic(domain, "solve_spde");
  if (lambda_sqrt.rows() != lambda_sqrt.cols()) throw std::invalid_argument("solve_spde: Lambda^{1/2} not square");
  if (lambda_sqrt.rows() != 1 || wiener.dimension != 1)
    throw std::invalid_argument("solve_spde: shape mismatch (one-dimensional problem needs 1 x 1 Lambda^{1/2})");
  if (std::abs(wiener.horizon() - T) > 1e-9 * T) throw std::invalid_argument("solve_spde: Wiener path does not span T");
  SPDEPath p = march_spectral("U0", aeff, mu, lambda_sqrt(0, 0), g, domain, wiener.dt, wiener.steps(),
                              &wiener.increments, opts);
  p.wiener = wiener;
  p.seed = wiener.seed;
  p.U.seed = wiener.seed;
  return p;
}

SolutionField spde_exact(double aeff, double mu, const Mat& lambda_sqrt, const InitialData& g,
                         const SpatialDomain& domain, const WienerPath& wiener,
                         const std::vector<Eigen::Index>& steps) {
  require_periodic(domain, "spde_exact");
  if (lambda_sqrt.rows() != 1 || lambda_sqrt.cols() != 1 || wiener.dimension != 1)
    throw std::invalid_argument("spde_exact: shape mismatch");
  const Eigen::Index P = domain.intervals;
  const Eigen::VectorXcd ghat = sample_spectrum(g, domain);
  const Vec kappa = wavenumbers(domain);
  SolutionField f = spectral_field("U0 (exact)", domain, steps.size());
  f.seed = wiener.seed;
  for (std::size_t j = 0; j < steps.size(); ++j) {
    const double t = double(steps[j]) * wiener.dt;
    const double w = lambda_sqrt(0, 0) * wiener.value(steps[j])(0);
    Eigen::VectorXcd c(P);
    for (Eigen::Index m = 0; m < P; ++m) {
      const double e = std::exp(-aeff * kappa(m) * kappa(m) * t);
      c(m) = ghat(m) * e * (t * mu * derivative_symbol(kappa(m), 3, m == P / 2) +
                            w * derivative_symbol(kappa(m), 2, m == P / 2));
    }
    f.times.push_back(t);
    f.values.col(Eigen::Index(j)) = inverse_fft_real(c);
  }
  return f;
}

}  // namespace parahom
