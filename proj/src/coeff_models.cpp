#include "parahom/coeff_models.hpp"

#include "parahom/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace parahom {

namespace {

constexpr double kTwoPi = 2.0 * EIGEN_PI;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct Fnv {
  std::uint64_t h = 1469598103934665603ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  }
  void num(double x) { bytes(&x, sizeof x); }
  void num(std::int64_t x) { bytes(&x, sizeof x); }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
};

/// Extreme eigenvalues of a symmetric 1x1 or 2x2 matrix stored row-major.
std::pair<double, double> sym_eig_range(const double* m, int n) {
  if (n == 1) return {m[0], m[0]};
  const double tr = 0.5 * (m[0] + m[3]);
  const double d = std::sqrt(0.25 * (m[0] - m[3]) * (m[0] - m[3]) + m[1] * m[2]);
  return {tr - d, tr + d};
}

double op_norm_sym(const double* m, int n) {
  const auto [lo, hi] = sym_eig_range(m, n);
  return std::max(std::abs(lo), std::abs(hi));
}

Field matrix_field(const TorusGrid& grid, const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn) {
  return Field::sample(grid, FieldRank::Matrix, fn);
}

void check_symmetric(const Field& f, const char* what) {
  if (f.rank() != FieldRank::Matrix) throw std::invalid_argument(std::string(what) + ": matrix field expected");
  if (f.dimension() == 2)
    for (Eigen::Index k = 0; k < f.nodes(); ++k)
      if (std::abs(f.entry(k, 0, 1) - f.entry(k, 1, 0)) > 1e-14)
        throw std::invalid_argument(std::string(what) + ": field is not symmetric");
}

}  // namespace

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

double DriverSpec::correlation_time() const {
  return kind == DriverKind::OrnsteinUhlenbeck ? 1.0 / gamma : 1.0 / (2.0 * theta);
}

void DriverSpec::validate() const {
  if (dimension < 1) throw std::invalid_argument("DriverSpec: dimension must be >= 1");
  if (!(ds > 0)) throw std::invalid_argument("DriverSpec: ds must be positive");
  if (sigma.rows() != dimension || sigma.cols() != dimension)
    throw std::invalid_argument("DriverSpec: sigma must be N x N");
  if (kind == DriverKind::OrnsteinUhlenbeck && !(gamma > 0))
    throw std::invalid_argument("DriverSpec: OU rate must be positive");
  if (kind == DriverKind::Bistable && !(theta > 0))
    throw std::invalid_argument("DriverSpec: bistable drift scale must be positive");
  if (initial_state && initial_state->size() != dimension)
    throw std::invalid_argument("DriverSpec: initial state has the wrong dimension");
  // q = sigma sigma^T / 2 must be SPD; sigma = 0 is accepted as a frozen
  // (degenerate) driver.
  if (!degenerate()) {
    Eigen::LLT<Eigen::MatrixXd> llt(diffusion());
    const double floor = 1e-12 * diffusion().cwiseAbs().maxCoeff();
    if (llt.info() != Eigen::Success ||
        llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= std::sqrt(floor))
      throw std::invalid_argument("DriverSpec: noise covariance q is not positive definite");
  }
}

Eigen::Index DriverPath::index_at(double s) const {
  const double r = (s - start) / ds;
  Eigen::Index k = static_cast<Eigen::Index>(std::floor(r + 1e-9));
  if (k < 0 || k >= size()) throw std::out_of_range("DriverPath: time outside the path");
  return k;
}

DriverPath DriverPath::reversed() const {
  DriverPath r;
  r.ds = ds;
  r.seed = seed;
  r.start = -end();
  r.states = states.colwise().reverse();
  return r;
}

DriverPath sample_driver(const DriverSpec& spec, double horizon, double start) {
  spec.validate();
  if (!(horizon > 0)) throw std::invalid_argument("sample_driver: horizon must be positive");
  const int N = spec.dimension;
  const Eigen::Index K = static_cast<Eigen::Index>(std::ceil(horizon / spec.ds - 1e-9));
  DriverPath path;
  path.start = start;
  path.ds = spec.ds;
  path.seed = spec.seed;
  path.states.resize(K + 1, N);

  auto rng = make_rng(spec.seed, 0);
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(N), x(N);
  auto draw = [&]() {
    for (int i = 0; i < N; ++i) z(i) = normal(rng);
  };

  if (spec.kind == DriverKind::OrnsteinUhlenbeck) {
    const double decay = std::exp(-spec.gamma * spec.ds);
    const Eigen::MatrixXd S = spec.sigma * spec.sigma.transpose();
    Eigen::MatrixXd step_chol = Eigen::MatrixXd::Zero(N, N), stat_chol = Eigen::MatrixXd::Zero(N, N);
    if (!spec.degenerate()) {
      step_chol = Eigen::LLT<Eigen::MatrixXd>(S * (-std::expm1(-2.0 * spec.gamma * spec.ds)) /
                                              (2.0 * spec.gamma)).matrixL();
      stat_chol = Eigen::LLT<Eigen::MatrixXd>(S / (2.0 * spec.gamma)).matrixL();
    }
    if (spec.initial_state) {
      x = *spec.initial_state;
    } else {
      draw();
      x = stat_chol * z;
    }
    path.states.row(0) = x.transpose();
    for (Eigen::Index k = 1; k <= K; ++k) {
      draw();
      x = decay * x + step_chol * z;
      path.states.row(k) = x.transpose();
    }
    return path;
  }

  // Bistable: Euler-Maruyama with a discarded burn-in.
  const double sq = std::sqrt(spec.ds);
  x = spec.initial_state ? *spec.initial_state : Eigen::VectorXd::Zero(N);
  auto step = [&]() {
    draw();
    const double r2 = x.squaredNorm();
    x += spec.ds * spec.theta * (1.0 - r2) * x + sq * (spec.sigma * z);
  };
  if (!spec.initial_state) {
    const Eigen::Index nb = static_cast<Eigen::Index>(std::ceil(spec.burn_in / spec.ds));
    for (Eigen::Index k = 0; k < nb; ++k) step();
  }
  path.states.row(0) = x.transpose();
  for (Eigen::Index k = 1; k <= K; ++k) {
    step();
    path.states.row(k) = x.transpose();
  }
  return path;
}

double apply_link(Link link, double x) {
  switch (link) {
    case Link::Tanh: return std::tanh(x);
    case Link::Sin: return std::sin(x);
  }
  return 0.0;
}

std::string link_name(Link link) { return link == Link::Tanh ? "tanh" : "sin"; }

Link link_from_name(const std::string& name) {
  if (name == "tanh") return Link::Tanh;
  if (name == "sin") return Link::Sin;
  throw std::invalid_argument("unknown link function '" + name + "'");
}

CoefficientModel::CoefficientModel(std::string name, Field base, std::vector<Modulation> modulations,
                                   DriverSpec driver)
    : name_(std::move(name)), base_(std::move(base)), modulations_(std::move(modulations)),
      driver_(std::move(driver)) {
  driver_.validate();
  check_symmetric(base_, "CoefficientModel base");
  for (const auto& m : modulations_) {
    check_symmetric(m.field, "CoefficientModel modulation");
    if (m.field.grid() != base_.grid())
      throw std::invalid_argument("CoefficientModel: modulation on a different grid");
    if (m.component < 0 || m.component >= driver_.dimension)
      throw std::invalid_argument("CoefficientModel: modulation reads a missing driver component");
  }
  certify();
}

void CoefficientModel::certify() {
  const int n = dimension();
  eig_min_ = INFINITY;
  eig_max_ = -INFINITY;
  Eigen::VectorXd row(n * n);
  for (Eigen::Index k = 0; k < base_.nodes(); ++k) {
    row = base_.values().row(k).transpose();
    auto [lo, hi] = sym_eig_range(row.data(), n);
    double spread = 0;
    for (const auto& m : modulations_) {
      row = m.field.values().row(k).transpose();
      spread += op_norm_sym(row.data(), n);
    }
    eig_min_ = std::min(eig_min_, lo - spread);
    eig_max_ = std::max(eig_max_, hi + spread);
  }
  if (!(eig_min_ > 0)) throw std::invalid_argument("CoefficientModel: ellipticity certificate fails");
  lambda_ = std::min(eig_min_, 1.0 / eig_max_);
}

Eigen::VectorXd CoefficientModel::link_values(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  Eigen::VectorXd g(modulations_.size());
  for (std::size_t k = 0; k < modulations_.size(); ++k)
    g(k) = apply_link(modulations_[k].link, modulations_[k].scale * y(modulations_[k].component));
  return g;
}

void CoefficientModel::evaluate_into(const Eigen::Ref<const Eigen::VectorXd>& y, Field& out) const {
  if (out.grid() != grid() || out.rank() != FieldRank::Matrix || out.nodes() != base_.nodes())
    out = Field(grid(), FieldRank::Matrix);
  out.values() = base_.values();
  for (const auto& m : modulations_) {
    const double g = apply_link(m.link, m.scale * y(m.component));
    if (g != 0.0) out.values() += g * m.field.values();
  }
}

Field CoefficientModel::evaluate(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  Field out(grid(), FieldRank::Matrix);
  evaluate_into(y, out);
  return out;
}

std::uint64_t CoefficientModel::hash() const {
  Fnv f;
  f.str(name_);
  f.num(std::int64_t(dimension()));
  f.num(std::int64_t(grid().resolution()));
  f.bytes(base_.values().data(), sizeof(double) * base_.values().size());
  for (const auto& m : modulations_) {
    f.bytes(m.field.values().data(), sizeof(double) * m.field.values().size());
    f.str(link_name(m.link));
    f.num(std::int64_t(m.component));
    f.num(m.scale);
  }
  f.num(std::int64_t(driver_.kind == DriverKind::OrnsteinUhlenbeck ? 0 : 1));
  f.num(std::int64_t(driver_.dimension));
  f.num(driver_.gamma);
  f.num(driver_.theta);
  f.bytes(driver_.sigma.data(), sizeof(double) * driver_.sigma.size());
  f.num(driver_.ds);
  return f.h;
}

Field evaluate_a(const CoefficientModel& model, const DriverPath& path, Eigen::Index s_index) {
  if (s_index < 0 || s_index >= path.size()) throw std::out_of_range("evaluate_a: s_index outside path");
  Field a = model.evaluate(path.state(s_index));
  const int n = a.dimension();
  const double lam = model.ellipticity(), tol = 1e-12;
  Eigen::VectorXd row(n * n);
  for (Eigen::Index k = 0; k < a.nodes(); ++k) {
    row = a.values().row(k).transpose();
    const auto [lo, hi] = sym_eig_range(row.data(), n);
    if (lo < lam - tol || hi > 1.0 / lam + tol)
      throw std::logic_error("evaluate_a: ellipticity certificate violated");
  }
  return a;
}

namespace {

DriverSpec reference_ou(double ds) {
  DriverSpec d;
  d.kind = DriverKind::OrnsteinUhlenbeck;
  d.dimension = 1;
  d.gamma = 1.0;
  d.sigma = Eigen::MatrixXd::Constant(1, 1, std::sqrt(2.0));
  d.ds = ds;
  return d;
}

}  // namespace

CoefficientModel make_sinusoidal_1d(int resolution, double c0, double c1, Link link,
                                    const DriverSpec& driver) {
  const TorusGrid grid(1, resolution);
  Field base = matrix_field(grid, [&](const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(1, c0); });
  std::vector<Modulation> mods;
  if (c1 != 0.0) {
    Modulation m;
    m.field = matrix_field(grid, [&](const Eigen::VectorXd& z) {
      return Eigen::VectorXd::Constant(1, c1 * std::sin(kTwoPi * z(0)));
    });
    m.link = link;
    mods.push_back(std::move(m));
  }
  return CoefficientModel("sinusoidal", std::move(base), std::move(mods), driver);
}

CoefficientModel make_r1(int resolution, double ds) {
  CoefficientModel m = make_sinusoidal_1d(resolution, 2.0, 1.0, Link::Tanh, reference_ou(ds));
  return CoefficientModel("R1", m.base(), m.modulations(), m.driver());
}

CoefficientModel make_r2(int resolution, double ds) {
  const TorusGrid grid(1, resolution);
  Field base = matrix_field(grid, [](const Eigen::VectorXd& z) {
    return Eigen::VectorXd::Constant(1, 2.0 + std::sin(kTwoPi * z(0)));
  });
  DriverSpec d = reference_ou(ds);
  d.sigma.setZero();
  d.initial_state = Eigen::VectorXd::Zero(1);
  return CoefficientModel("R2", std::move(base), {}, d);
}

CoefficientModel make_constant(const Eigen::MatrixXd& A, int resolution, double ds) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n) throw std::invalid_argument("make_constant: square matrix expected");
  const TorusGrid grid(n, resolution);
  Eigen::VectorXd flat(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) flat(i * n + j) = A(i, j);
  Field base = matrix_field(grid, [&](const Eigen::VectorXd&) { return flat; });
  DriverSpec d = reference_ou(ds);
  return CoefficientModel("constant", std::move(base), {}, d);
}

CoefficientModel make_separable_2d(int resolution, double offdiag_modulation, double ds) {
  const TorusGrid grid(2, resolution);
  Field base = matrix_field(grid, [](const Eigen::VectorXd& z) {
    Eigen::VectorXd v(4);
    v << 2.0 + std::sin(kTwoPi * z(0)), 0.0, 0.0, 2.0 + std::sin(kTwoPi * z(1));
    return v;
  });
  std::vector<Modulation> mods;
  if (offdiag_modulation != 0.0) {
    Modulation m;
    m.field = matrix_field(grid, [&](const Eigen::VectorXd& z) {
      const double c = offdiag_modulation * std::cos(kTwoPi * (z(0) + z(1)));
      Eigen::VectorXd v(4);
      v << 0.0, c, c, 0.0;
      return v;
    });
    mods.push_back(std::move(m));
  }
  return CoefficientModel("separable2d", std::move(base), std::move(mods), reference_ou(ds));
}

CoefficientModel make_asymmetric(int resolution, double ds) {
  const TorusGrid grid(1, resolution);
  Field base = matrix_field(grid, [](const Eigen::VectorXd& z) {
    return Eigen::VectorXd::Constant(1, 2.0 + std::sin(kTwoPi * z(0)) + 0.5 * std::sin(2.0 * kTwoPi * z(0)));
  });
  DriverSpec d = reference_ou(ds);
  d.sigma.setZero();
  d.initial_state = Eigen::VectorXd::Zero(1);
  return CoefficientModel("asymmetric", std::move(base), {}, d);
}

CoefficientModel make_fast_driver(int resolution, double gamma, double ds) {
  DriverSpec d = reference_ou(ds);
  d.gamma = gamma;
  d.sigma = Eigen::MatrixXd::Constant(1, 1, std::sqrt(2.0 * gamma));
  CoefficientModel m = make_sinusoidal_1d(resolution, 2.0, 1.0, Link::Tanh, d);
  return CoefficientModel("fast", m.base(), m.modulations(), m.driver());
}

CoefficientModel make_model(const std::string& name, int resolution, double ds) {
  if (name == "R1") return make_r1(resolution, ds);
  if (name == "R2") return make_r2(resolution, ds);
  if (name == "constant") return make_constant(Eigen::MatrixXd::Constant(1, 1, 2.0), resolution, ds);
  if (name == "separable2d") return make_separable_2d(resolution, 0.3, ds);
  if (name == "asymmetric") return make_asymmetric(resolution, ds);
  if (name == "fast") return make_fast_driver(resolution, 10.0, ds);
  throw std::invalid_argument("unknown model '" + name + "'");
}

MixingReport mixing_diagnostic_series(const Eigen::MatrixXd& series, double ds, double max_lag,
                                      double tolerance) {
  const Eigen::Index T = series.rows();
  if (!(max_lag > 0) || !(ds > 0)) throw std::invalid_argument("mixing_diagnostic: bad lag or step");
  const Eigen::Index L = static_cast<Eigen::Index>(std::llround(max_lag / ds));
  if (double(T) * ds < 10.0 * max_lag || L < 4)
    throw std::invalid_argument("mixing_diagnostic: horizon too short for the requested max lag");

  MixingReport rep;
  rep.tolerance = tolerance;
  rep.lags.resize(L);
  for (Eigen::Index k = 0; k < L; ++k) rep.lags[k] = double(k) * ds;
  const auto cov = autocovariance(series, L, true);
  rep.pass = true;
  for (Eigen::Index c = 0; c < series.cols(); ++c) {
    std::vector<double> rho(L);
    const double c0 = cov[0](c, c);
    for (Eigen::Index k = 0; k < L; ++k) rho[k] = c0 > 1e-300 ? cov[k](c, c) / c0 : 1.0;

    // Fit over the first stretch where 0.1 <= rho <= 0.9.
    std::vector<double> xs, ys, lx;
    for (Eigen::Index k = 1; k < L; ++k) {
      if (rho[k] > 0.9) continue;
      if (rho[k] < 0.1) break;
      xs.push_back(rep.lags[k]);
      lx.push_back(std::log(rep.lags[k]));
      ys.push_back(std::log(rho[k]));
    }
    double rate = 0, power = 0;
    if (xs.size() >= 3) {
      const Eigen::Map<const Eigen::VectorXd> X(xs.data(), Eigen::Index(xs.size()));
      const Eigen::Map<const Eigen::VectorXd> LX(lx.data(), Eigen::Index(lx.size()));
      const Eigen::Map<const Eigen::VectorXd> Y(ys.data(), Eigen::Index(ys.size()));
      rate = -linear_fit(X, Y).slope;
      power = -linear_fit(LX, Y).slope;
    }
    double integral = 0, tail = 0;
    for (Eigen::Index k = 0; k < L; ++k) {
      integral += ds * rho[k];
      if (k >= L / 2) tail += ds * rho[k];
    }
    rep.autocorrelation.push_back(std::move(rho));
    rep.exponential_rate.push_back(rate);
    rep.power_exponent.push_back(power);
    rep.integrated.push_back(integral);
    rep.tail.push_back(std::abs(tail));
    if (!(std::abs(tail) <= tolerance)) rep.pass = false;
  }
  return rep;
}

MixingReport mixing_diagnostic(const CoefficientModel& model, const DriverPath& path,
                               double max_lag, double tolerance) {
  Eigen::MatrixXd obs;
  if (model.modulations().empty()) {
    obs = path.states;
  } else {
    obs.resize(path.size(), Eigen::Index(model.modulations().size()));
    for (Eigen::Index k = 0; k < path.size(); ++k) obs.row(k) = model.link_values(path.state(k)).transpose();
  }
  return mixing_diagnostic_series(obs, path.ds, max_lag, tolerance);
}

}  // namespace parahom
