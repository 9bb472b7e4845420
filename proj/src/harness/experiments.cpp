#include "parahom/harness/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>

namespace parahom::harness {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Eigen::Index steps_of(double span, double ds) { return static_cast<Eigen::Index>(std::llround(span / ds)); }

Mat unflatten(const Vec& v, int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = v(i * n + j);
  return m;
}

Vec flatten(const Mat& m) {
  const int n = int(m.rows());
  Vec v(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) v(i * n + j) = m(i, j);
  return v;
}

double mean_of(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v;
  return x.empty() ? 0.0 : s / double(x.size());
}

double se_of(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  const double m = mean_of(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / double(x.size() - 1) / double(x.size()));
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// Two-sided 95% Student t quantile.
double t975(int dof) {
  static const double q[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                             2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                             2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (dof < 1) return std::numeric_limits<double>::infinity();
  return dof <= 30 ? q[dof - 1] : 1.96;
}

Vec y_origin(const CoefficientModel& model) { return Vec::Zero(model.driver().dimension); }

InitialData initial_from(const ExperimentConfig& cfg) {
  return InitialData::gaussian(cfg.number("theorem2.initial.amplitude"), cfg.number("theorem2.initial.centre"),
                               cfg.number("theorem2.initial.width"));
}

json moments_json(const Vec& v) { return to_json(v); }

}  // namespace

void Log::operator()(const std::string& line) const {
  static std::mutex m;
  if (!os) return;
  std::lock_guard<std::mutex> lock(m);
  *os << line << std::endl;
}

void stream_flux(const CoefficientModel& model, const DriverPath& path, double start, double burn_in,
                 double horizon, const std::function<void(double, const Vec&)>& row) {
  const double ds = path.ds;
  const Eigen::Index nb = steps_of(burn_in, ds), nh = steps_of(horizon, ds);
  const Eigen::Index n0 = path.index_at(start);
  if (n0 - nb < 0 || n0 + nh > path.size() - 1)
    throw std::invalid_argument("stream_flux: driver path does not cover the burn-in and horizon");
  CellStepper stepper(model);
  Mat chi = Mat::Zero(model.grid().size(), model.dimension());
  for (Eigen::Index k = n0 - nb; k < n0 + nh; ++k) {
    stepper.set_state(path.state(k));
    stepper.advance_corrector(chi);
    if (k >= n0) row(path.time(k), stepper.flux(chi));
  }
}

DriverPath driver_path(const CoefficientModel& model, std::uint64_t seed, double before, double after) {
  DriverSpec spec = model.driver();
  spec.seed = seed;
  const double ds = spec.ds;
  const double st = ds * std::ceil(before / ds - 1e-9);
  return sample_driver(spec, st + after + 2.0 * ds, -st);
}

// ---------------------------------------------------------------------------
// Tensors

json TensorEstimate::to_json() const {
  json j;
  j["model"] = model;
  j["time_independent"] = time_independent;
  j["aeff"] = {{"values", harness::to_json(aeff)},
               {"standard_error", harness::to_json(aeff_se)},
               {"per_seed", aeff_per_seed},
               {"seeds", aeff_seeds},
               {"provenance", time_independent ? "parabolic route, solver tolerance" : "pooled over seeds, se from the seed spread"}};
  j["lambda"] = {{"values", harness::to_json(lambda.values)},
                 {"raw", harness::to_json(lambda.raw)},
                 {"standard_error", harness::to_json(lambda.standard_error)},
                 {"sqrt", harness::to_json(lambda.sqrt)},
                 {"max_lag", lambda.max_lag},
                 {"tail", lambda.tail},
                 {"noise_floor", lambda.noise_floor},
                 {"tail_ok", lambda.tail_ok},
                 {"clipped", lambda.clipped},
                 {"samples", lambda.samples},
                 {"seeds", lambda_seeds}};
  j["mu"] = {{"values", harness::to_json(mu.values)},
             {"standard_error", harness::to_json(mu.standard_error)},
             {"horizon", mu.horizon},
             {"seeds", mu_seeds}};
  j["seconds"] = seconds;
  return j;
}

TensorEstimate estimate_tensors(const CoefficientModel& model, const ExperimentConfig& cfg, int workers,
                                const Log& log) {
  const auto t0 = Clock::now();
  TensorEstimate te;
  te.model = model.name();
  te.time_independent = model.time_independent();
  const int n = model.dimension();
  const int p = n * n;
  const double ds = model.driver().ds;
  const double b = default_burn_in(model, ds);
  const auto batches = Eigen::Index(cfg.integer("estimation.batches"));
  const SeedRange sa = cfg.seeds("aeff"), sl = cfg.seeds("lambda"), sm = cfg.seeds("mu");

  if (te.time_independent) {
    const double H = cfg.number("estimation.static_horizon");
    const DriverPath path = driver_path(model, sa.first, b, H);
    CorrectorOptions o;
    o.horizon = H;
    o.retain_stride = std::max<Eigen::Index>(1, steps_of(H, ds));
    const CorrectorTrajectory chi = solve_parabolic_corrector(model, path, o);
    AeffOptions ao;
    ao.batches = batches;
    const EffectiveMatrix em = estimate_aeff(flux_series(model, chi), ao);
    te.aeff = em.values;
    te.aeff_se = em.standard_error;
    te.aeff_per_seed = {em.values(0, 0)};
    te.aeff_seeds = SeedRange{sa.first, sa.first}.str();
    te.lambda.values = te.lambda.raw = te.lambda.sqrt = Mat::Zero(p, p);
    te.lambda.standard_error = Mat::Zero(p, p);
    te.mu = mu_elliptic(model.evaluate(y_origin(model)), te.aeff);
    te.seconds = since(t0);
    log("tensors[" + te.model + "]: time-independent, aeff " + fmt(te.aeff(0, 0), 12) + ", Lambda = 0, mu " +
        fmt(te.mu.values(0)));
    return te;
  }

  const double Ha = cfg.number("estimation.aeff_horizon");
  log("tensors[" + te.model + "]: aeff over " + std::to_string(sa.size()) + " seeds x horizon " + fmt(Ha));
  const auto means = parallel_map<Vec>(sa.size(), workers, [&](std::size_t i) {
    const DriverPath path = driver_path(model, sa[i], b, Ha);
    BatchMeans bm(p, std::max<std::int64_t>(1, steps_of(Ha, ds) / batches));
    stream_flux(model, path, 0.0, b, Ha, [&](double, const Vec& F) { bm.push(F); });
    return Vec(bm.mean());
  });
  Vec pooled = Vec::Zero(p), se = Vec::Zero(p);
  for (const auto& m : means) pooled += m;
  pooled /= double(means.size());
  for (int c = 0; c < p; ++c) {
    std::vector<double> xs;
    for (const auto& m : means) xs.push_back(m(c));
    se(c) = se_of(xs);
  }
  for (const auto& m : means) te.aeff_per_seed.push_back(m(0));
  Mat A = unflatten(pooled, n), S = unflatten(se, n);
  te.aeff = 0.5 * (A + A.transpose());
  te.aeff_se = 0.5 * (S + S.transpose());
  te.aeff_seeds = sa.str();
  log("tensors[" + te.model + "]: aeff " + fmt(te.aeff(0, 0), 9) + " +- " + fmt(te.aeff_se(0, 0), 3) + " (" +
      fmt(since(t0), 3) + " s)");

  const double Hl = cfg.number("estimation.lambda_horizon");
  const Vec aflat = flatten(te.aeff);
  auto series = parallel_map<FluctuationSeries>(sl.size(), workers, [&](std::size_t i) {
    const DriverPath path = driver_path(model, sl[i], b, Hl);
    FluctuationSeries fs;
    fs.n = n;
    fs.ds = ds;
    fs.values.resize(steps_of(Hl, ds), p);
    fs.times.reserve(std::size_t(fs.values.rows()));
    Eigen::Index r = 0;
    stream_flux(model, path, 0.0, b, Hl, [&](double s, const Vec& F) {
      fs.times.push_back(s);
      fs.values.row(r++) = (F - aflat).transpose();
    });
    return fs;
  });
  LambdaOptions lo;
  lo.correlation_time = model.driver().correlation_time();
  te.lambda = estimate_lambda(series, cfg.number("estimation.lambda_max_lag"), lo);
  te.lambda_seeds = sl.str();
  series.clear();
  log("tensors[" + te.model + "]: Lambda " + fmt(te.lambda.values(0, 0)) + " +- " +
      fmt(te.lambda.standard_error(0, 0), 3) + " (" + fmt(since(t0), 3) + " s)");

  const double Hm = cfg.number("estimation.mu_horizon");
  const auto mus = parallel_map<MuTensor>(sm.size(), workers, [&](std::size_t i) {
    const DriverPath path = driver_path(model, sm[i], 2.0 * b, Hm);
    return estimate_mu_streaming(model, path, te.aeff, b, b, Hm, batches);
  });
  te.mu.n = n;
  te.mu.horizon = Hm * double(mus.size());
  te.mu.values = Vec::Zero(n * n * n);
  te.mu.standard_error = Vec::Zero(n * n * n);
  for (Eigen::Index c = 0; c < te.mu.values.size(); ++c) {
    std::vector<double> xs;
    for (const auto& m : mus) xs.push_back(m.values(c));
    te.mu.values(c) = mean_of(xs);
    te.mu.standard_error(c) = mus.size() >= 2 ? se_of(xs) : mus.front().standard_error(c);
  }
  te.mu_seeds = sm.str();
  te.seconds = since(t0);
  log("tensors[" + te.model + "]: mu " + fmt(te.mu.values(0)) + " +- " + fmt(te.mu.standard_error(0), 3) + " (" +
      fmt(te.seconds, 3) + " s)");
  return te;
}

// ---------------------------------------------------------------------------
// Effective matrix by every route

const RouteEstimate& EffectiveReport::route(const std::string& name) const {
  for (const auto& r : routes)
    if (r.route == name) return r;
  throw std::out_of_range("EffectiveReport: no route '" + name + "'");
}

json EffectiveReport::to_json() const {
  json j;
  j["model"] = model;
  json rs = json::array();
  for (const auto& r : routes)
    rs.push_back({{"route", r.route},
                  {"regime", r.regime},
                  {"values", harness::to_json(r.values)},
                  {"standard_error", harness::to_json(r.standard_error)},
                  {"horizon", r.horizon},
                  {"provenance", r.provenance}});
  j["routes"] = rs;
  j["equivalence"] = {{"difference", harness::to_json(equivalence.difference)},
                      {"combined_se", harness::to_json(equivalence.combined_se)},
                      {"max_z", equivalence.max_z},
                      {"factor", factor},
                      {"agree", equivalent}};
  j["seconds"] = seconds;
  return j;
}

CsvTable EffectiveReport::table() const {
  CsvTable t({"model", "route", "regime", "i", "j", "value", "standard_error", "horizon", "provenance"});
  for (const auto& r : routes)
    for (Eigen::Index i = 0; i < r.values.rows(); ++i)
      for (Eigen::Index k = 0; k < r.values.cols(); ++k)
        t.row({model, r.route, r.regime, i, k, r.values(i, k), r.standard_error(i, k), r.horizon, r.provenance});
  return t;
}

EffectiveReport run_effective(const CoefficientModel& model, const ExperimentConfig& cfg, const Log& log) {
  const auto t0 = Clock::now();
  EffectiveReport rep;
  rep.model = model.name();
  rep.factor = cfg.number("effective.equivalence_factor");
  const int n = model.dimension();
  const double ds = model.driver().ds;
  const double b = default_burn_in(model, ds);
  const bool fixed = model.time_independent();
  const double H = fixed ? cfg.number("oracle.horizon") : cfg.number("effective.horizon");
  const DriverPath path = driver_path(model, cfg.seeds("effective").first, b, H + b + ds);

  CorrectorOptions o;
  o.horizon = H;
  o.retain_stride = std::max<Eigen::Index>(1, steps_of(H, ds));
  const CorrectorTrajectory fwd = solve_parabolic_corrector(model, path, o);
  const CorrectorTrajectory rev = solve_reversed_corrector(model, path, o);
  AeffOptions ao;
  ao.batches = Eigen::Index(cfg.integer("estimation.batches"));
  rep.equivalence = aeff_equivalence(flux_series(model, fwd), flux_series(model, rev), ao, rep.factor);
  rep.equivalent = rep.equivalence.agree;
  const std::string mc = fixed ? "solver tolerance (time-independent)" : "batch-means MC error";
  rep.routes.push_back({"parabolic", "alpha = 2", rep.equivalence.forward.values,
                        rep.equivalence.forward.standard_error, H, mc});
  rep.routes.push_back({"reversed", "alpha = 2", rep.equivalence.reversed.values,
                        rep.equivalence.reversed.standard_error, H, mc});
  log("effective[" + rep.model + "]: parabolic " + fmt(rep.equivalence.forward.values(0, 0), 12) + ", reversed " +
      fmt(rep.equivalence.reversed.values(0, 0), 12) + ", z " + fmt(rep.equivalence.max_z, 3));

  // A fixed coefficient needs one frozen sample; keep the batch count usable.
  const auto stride = fixed ? std::max<Eigen::Index>(1, path.size() / 400)
                            : Eigen::Index(cfg.integer("effective.frozen_stride"));
  const EffectiveMatrix fr = frozen_ensemble_aeff(model, path, stride);
  rep.routes.push_back({"frozen_ensemble", "alpha < 2", fr.values, fr.standard_error, path.end() - path.start,
                        fixed ? "elliptic CG tolerance" : "batch-means MC error over frozen samples"});
  const EffectiveMatrix av = averaged_coefficient_aeff(model, path);
  rep.routes.push_back({"averaged_coefficient", "alpha > 2", av.values, Mat::Zero(n, n), path.end() - path.start,
                        "elliptic CG tolerance; time average of a over the path"});
  if (fixed) {
    const EllipticResult el = solve_elliptic_corrector(model.evaluate(y_origin(model)));
    rep.routes.push_back({"elliptic", "time-independent", el.aeff, Mat::Zero(n, n), 0.0,
                          "CG relative residual " + fmt(el.residual, 2)});
  } else if (n == 1 && model.driver().kind == DriverKind::OrnsteinUhlenbeck && model.driver().dimension == 1) {
    const JointCorrector jc = solve_joint_corrector_1d(model, cfg.number("effective.joint_half_width"),
                                                       int(cfg.integer("effective.joint_ny")));
    rep.routes.push_back({"joint_corrector", "alpha = 2", Mat::Constant(1, 1, jc.aeff), Mat::Zero(1, 1), 0.0,
                          "finite-volume joint corrector, residual " + fmt(jc.residual, 2) +
                              ", ny " + std::to_string(jc.ny)});
  }
  rep.seconds = since(t0);
  return rep;
}

// ---------------------------------------------------------------------------
// Invariance principle

json CltReport::to_json() const {
  json j;
  j["model"] = model;
  j["eps"] = eps;
  j["T"] = T;
  j["checkpoints"] = checkpoints;
  j["seeds"] = seeds;
  j["lambda"] = harness::to_json(lambda);
  json es = json::array();
  for (const auto& e : entries)
    es.push_back({{"t", e.t},
                  {"entry", e.entry},
                  {"mean", e.mean},
                  {"mean_z", e.mean_z},
                  {"variance", e.variance},
                  {"variance_se", e.variance_se},
                  {"predicted_variance", e.predicted},
                  {"ratio", e.ratio},
                  {"ratio_se", e.ratio_se},
                  {"skewness", e.skew},
                  {"skew_z", e.skew_z},
                  {"excess_kurtosis", e.kurtosis},
                  {"kurtosis_z", e.kurtosis_z}});
  j["entries"] = es;
  json cov = json::array();
  for (std::size_t k = 0; k < checkpoint_covariance.size(); ++k)
    cov.push_back({{"entry", k},
                   {"sample", harness::to_json(checkpoint_covariance[k])},
                   {"predicted", harness::to_json(predicted_covariance[k])}});
  j["checkpoint_covariance"] = cov;
  j["min_covariance_eigenvalue"] = min_covariance_eigenvalue;
  j["degenerate"] = degenerate;
  j["variance_band"] = {band_lo, band_hi};
  j["skew_limit"] = skew_limit;
  j["pass"] = pass;
  j["seconds"] = seconds;
  return j;
}

CsvTable CltReport::table() const {
  CsvTable t({"t", "entry", "mean", "mean_z", "variance", "variance_se", "predicted_variance", "ratio", "ratio_se",
              "skew_z", "kurtosis_z"});
  for (const auto& e : entries)
    t.row({e.t, e.entry, e.mean, e.mean_z, e.variance, e.variance_se, e.predicted, e.ratio, e.ratio_se, e.skew_z,
           e.kurtosis_z});
  return t;
}

CltReport run_clt(const CoefficientModel& model, const TensorEstimate& tensors, const ExperimentConfig& cfg,
                  int workers, const Log& log) {
  const auto t0 = Clock::now();
  CltReport rep;
  rep.model = model.name();
  rep.eps = cfg.number("clt.eps");
  rep.T = cfg.number("clt.T");
  rep.checkpoints = cfg.numbers("clt.checkpoints");
  std::sort(rep.checkpoints.begin(), rep.checkpoints.end());
  rep.band_lo = cfg.numbers("clt.variance_band")[0];
  rep.band_hi = cfg.numbers("clt.variance_band")[1];
  rep.skew_limit = cfg.number("clt.skew_z");
  rep.n = model.dimension();
  rep.lambda = tensors.lambda.values;
  const int p = rep.n * rep.n;
  const SeedRange seeds = cfg.seeds("clt");
  rep.seeds = seeds.size();
  if (rep.seeds < 8) throw ConfigError("clt: at least 8 seeds are needed for the moment tests");
  const double ds = model.driver().ds;
  const double b = default_burn_in(model, ds);
  const double S = rep.T / (rep.eps * rep.eps);
  const std::size_t nc = rep.checkpoints.size();
  std::vector<Eigen::Index> ks;
  for (double t : rep.checkpoints) ks.push_back(steps_of(t / (rep.eps * rep.eps), ds));
  const Vec aflat = flatten(tensors.aeff);

  rep.samples = Mat::Zero(Eigen::Index(rep.seeds), Eigen::Index(nc) * p);
  rep.degenerate = model.time_independent();
  if (!rep.degenerate) {
    const auto rows = parallel_map<Vec>(rep.seeds, workers, [&](std::size_t i) {
      const DriverPath path = driver_path(model, seeds[i], b, S);
      Vec cum = Vec::Zero(p), out = Vec::Zero(Eigen::Index(nc) * p);
      Eigen::Index r = 0;
      std::size_t next = 0;
      stream_flux(model, path, 0.0, b, ds * double(ks.back()), [&](double, const Vec& F) {
        cum += ds * (F - aflat);
        ++r;
        while (next < nc && ks[next] == r) out.segment(Eigen::Index(next++) * p, p) = rep.eps * cum;
      });
      return out;
    });
    for (std::size_t i = 0; i < rows.size(); ++i) rep.samples.row(Eigen::Index(i)) = rows[i].transpose();
  }

  rep.pass = true;
  for (std::size_t c = 0; c < nc; ++c)
    for (int e = 0; e < p; ++e) {
      CltReport::Entry en;
      en.t = rep.checkpoints[c];
      en.entry = e;
      en.predicted = en.t * rep.lambda(e, e);
      const Moments mo = moments(rep.samples.col(Eigen::Index(c) * p + e));
      en.mean = mo.mean;
      en.variance = mo.variance;
      if (!rep.degenerate) {
        en.mean_z = mo.mean / mo.mean_se();
        en.variance_se = mo.variance_se();
        en.skew = mo.skewness;
        en.skew_z = mo.skew_z();
        en.kurtosis = mo.excess_kurtosis;
        en.kurtosis_z = mo.kurtosis_z();
        en.ratio = en.variance / en.predicted;
        const double lrel = tensors.lambda.standard_error(e, e) / rep.lambda(e, e);
        en.ratio_se = en.ratio * std::sqrt(std::pow(en.variance_se / en.variance, 2) + lrel * lrel);
        if (c + 1 == nc && !(en.ratio >= rep.band_lo && en.ratio <= rep.band_hi && std::abs(en.skew_z) < rep.skew_limit))
          rep.pass = false;
      }
      rep.entries.push_back(en);
    }
  if (rep.degenerate && rep.samples.cwiseAbs().maxCoeff() != 0.0) rep.pass = false;

  for (int e = 0; e < p; ++e) {
    Mat cols(rep.samples.rows(), static_cast<Eigen::Index>(nc));
    Mat pred(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(nc));
    for (std::size_t c = 0; c < nc; ++c) {
      cols.col(Eigen::Index(c)) = rep.samples.col(Eigen::Index(c) * p + e);
      for (std::size_t d = 0; d < nc; ++d)
        pred(Eigen::Index(c), Eigen::Index(d)) = std::min(rep.checkpoints[c], rep.checkpoints[d]) * rep.lambda(e, e);
    }
    rep.checkpoint_covariance.push_back(sample_covariance(cols));
    rep.predicted_covariance.push_back(pred);
  }
  const Mat full = sample_covariance(rep.samples);
  rep.min_covariance_eigenvalue = Eigen::SelfAdjointEigenSolver<Mat>(full).eigenvalues().minCoeff();
  const double scale = full.cwiseAbs().maxCoeff();
  if (rep.min_covariance_eigenvalue < -1e-12 * std::max(scale, 1e-300)) rep.pass = false;
  rep.seconds = since(t0);
  if (!rep.degenerate) {
    const auto& last = rep.entries[(nc - 1) * std::size_t(p)];
    log("clt[" + rep.model + "]: eps " + fmt(rep.eps) + ", " + std::to_string(rep.seeds) + " seeds, ratio " +
        fmt(last.ratio, 4) + " +- " + fmt(last.ratio_se, 2) + ", skew z " + fmt(last.skew_z, 3));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// U^eps against the limit SPDE

double TestFunctional::operator()(double x) const {
  const double y = (x - centre) / width;
  return parahom::hermite(hermite, y) * std::exp(-0.5 * y * y);
}

std::string TestFunctional::label() const {
  std::ostringstream os;
  if (hermite) os << "He" << hermite << "*";
  os << "G(c=" << centre << ",w=" << width << ")";
  return os.str();
}

std::vector<TestFunctional> test_functionals(const ExperimentConfig& cfg) {
  std::vector<TestFunctional> out;
  for (const auto& f : cfg.at("theorem2.test_functions"))
    out.push_back({f.at("centre").get<double>(), f.at("width").get<double>(), f.at("hermite").get<int>()});
  return out;
}

U0Prediction predict_u0_moments(double aeff, double mu, double lambda, const InitialData& g, double half_width,
                                double T, const std::vector<TestFunctional>& phi) {
  SpatialDomain dom;
  dom.half_width = half_width;
  dom.intervals = 8192;
  const HomogenizedProfile prof(aeff, g, dom);
  const Vec x = dom.nodes();
  const double h = dom.spacing();
  const Eigen::Index K = Eigen::Index(phi.size());
  Mat P(x.size(), K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index m = 0; m < x.size(); ++m) P(m, k) = phi[std::size_t(k)](x(m)) * h;
  const int nt = 4000;
  const double dt = T / nt;
  Mat c2(nt + 1, K), c3(nt + 1, K);
  Mat D;
  for (int j = 0; j <= nt; ++j) {
    prof.evaluate(j * dt, 3, D);
    c2.row(j) = (D.col(2).transpose() * P);
    c3.row(j) = (D.col(3).transpose() * P);
  }
  U0Prediction out;
  out.mean = Vec::Zero(K);
  out.variance = Vec::Zero(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    // tail(j) = int_{t_j}^T c2, by the trapezoid rule from the right.
    Vec tail = Vec::Zero(nt + 1);
    for (int j = nt - 1; j >= 0; --j) tail(j) = tail(j + 1) + 0.5 * dt * (c2(j, k) + c2(j + 1, k));
    double v = 0, m = 0;
    for (int j = 0; j <= nt; ++j) {
      const double w = (j == 0 || j == nt) ? 0.5 * dt : dt;
      v += w * tail(j) * tail(j);
      m += w * (j * dt) * mu * c3(j, k);
    }
    out.variance(k) = lambda * v;
    out.mean(k) = m;
  }
  return out;
}

json Theorem2Report::to_json() const {
  json j;
  j["model"] = model;
  j["T"] = T;
  j["eps"] = eps;
  j["seed_counts"] = seed_counts;
  json fs = json::array();
  for (const auto& f : functionals)
    fs.push_back({{"label", f.label()}, {"centre", f.centre}, {"width", f.width}, {"hermite", f.hermite}});
  j["functionals"] = fs;
  j["tensors"] = {{"aeff", aeff}, {"mu", mu}, {"lambda", lambda}};
  json pe = json::array();
  for (const auto& e : per_eps)
    pe.push_back({{"eps", e.eps},
                  {"seeds", e.seeds},
                  {"mean", moments_json(e.mean)},
                  {"mean_se", moments_json(e.mean_se)},
                  {"variance", moments_json(e.variance)},
                  {"variance_se", moments_json(e.variance_se)},
                  {"relative_variance_gap", moments_json(e.gap)},
                  {"relative_variance_gap_se", moments_json(e.gap_se)},
                  {"mean_z", moments_json(e.mean_z)},
                  {"ks_statistic", moments_json(e.ks)},
                  {"ks_p_value", moments_json(e.ks_p)},
                  {"diagnostics",
                   {{"seeds", e.diagnostic_seeds},
                    {"xi_eps1", e.xi1},
                    {"xi_eps1_se", e.xi1_se},
                    {"v_remainder", e.v_remainder},
                    {"v_scaled", e.v_scaled},
                    {"eps_chi21_term", e.chi21_term},
                    {"xi_eps2_minus_xi02", e.xi2_gap},
                    {"xi02", e.xi02}}},
                  {"norms",
                   {{"U_eps", e.U_norm}, {"u_minus_u0", e.u_minus_u0}, {"u_minus_corrected", e.u_minus_corrected}}},
                  {"monitors",
                   {{"mass_defect", e.mass_defect},
                    {"max_principle_excess", e.max_principle_excess},
                    {"boundary_mass", e.boundary_mass}}},
                  {"seconds", e.seconds}});
  j["per_eps"] = pe;
  j["u0"] = {{"seeds", u0.seeds},
             {"dt", u0.dt},
             {"points", u0.points},
             {"mean", moments_json(u0.mean)},
             {"mean_se", moments_json(u0.mean_se)},
             {"variance", moments_json(u0.variance)},
             {"variance_se", moments_json(u0.variance_se)},
             {"closed_form_mean", moments_json(u0.closed_form.mean)},
             {"closed_form_variance", moments_json(u0.closed_form.variance)}};
  j["limits"] = {{"variance_gap_max", gap_limit}, {"mean_z_max", z_limit}};
  j["verdict"] = {{"variance_gap_decreasing", variance_decreasing},
                  {"variance_gap_small", variance_small},
                  {"mean_gap", mean_ok},
                  {"xi_eps1_decreasing", xi1_decreasing},
                  {"degenerate", degenerate}};
  j["scope"] =
      "moments, marginals and KS distances of finitely many projections: necessary consequences of "
      "convergence in law in L2, not a certificate of it";
  j["seconds"] = seconds;
  return j;
}

CsvTable Theorem2Report::table() const {
  CsvTable t({"eps", "functional", "seeds", "mean", "mean_se", "variance", "variance_se", "u0_mean", "u0_mean_se",
              "u0_variance", "u0_variance_se", "relative_variance_gap", "gap_se", "mean_z", "ks", "ks_p"});
  for (const auto& e : per_eps)
    for (std::size_t k = 0; k < functionals.size(); ++k) {
      const auto i = Eigen::Index(k);
      t.row({e.eps, functionals[k].label(), e.seeds, e.mean(i), e.mean_se(i), e.variance(i), e.variance_se(i),
             u0.mean(i), u0.mean_se(i), u0.variance(i), u0.variance_se(i), e.gap(i), e.gap_se(i), e.mean_z(i),
             e.ks(i), e.ks_p(i)});
    }
  return t;
}

CsvTable Theorem2Report::samples_table() const {
  std::vector<std::string> h{"source", "eps", "index"};
  for (const auto& f : functionals) h.push_back(f.label());
  CsvTable t(h);
  for (const auto& e : per_eps)
    for (Eigen::Index r = 0; r < e.proj.rows(); ++r) {
      std::vector<json> row{"U_eps", e.eps, r};
      for (Eigen::Index k = 0; k < e.proj.cols(); ++k) row.push_back(e.proj(r, k));
      t.row(row);
    }
  for (Eigen::Index r = 0; r < u0.proj.rows(); ++r) {
    std::vector<json> row{"U0", 0.0, r};
    for (Eigen::Index k = 0; k < u0.proj.cols(); ++k) row.push_back(u0.proj(r, k));
    t.row(row);
  }
  return t;
}

namespace {

struct FineSample {
  Vec proj;
  bool diag = false;
  double U_norm = 0, plain = 0, corrected = 0;
  double xi1 = 0, v_rem = 0, v_scaled = 0, chi21 = 0, xi2_gap = 0, xi02 = 0;
  double mass = 0, maxp = 0, bmass = 0;
};

FineSample fine_sample(const CoefficientModel& model, const TensorEstimate& te, double eps, double T,
                       std::uint64_t seed, bool diag, const InitialData& g, const SpatialDomain& dom,
                       const std::vector<std::function<double(double)>>& tests, double boundary_tol) {
  const double ds = model.driver().ds;
  const double b = default_burn_in(model, ds);
  const double S = T / (eps * eps);
  const double lead = diag ? 2.0 * b : b;
  const DriverPath path = driver_path(model, seed, lead, S);
  CorrectorOptions o;
  o.burn_in = b;
  o.start = diag ? -b : 0.0;
  o.horizon = S + (diag ? b : 0.0);
  const CorrectorTrajectory chi = solve_parabolic_corrector(model, path, o);
  FluctuationSeries psi;
  Chi22Trajectory chi22;
  FineCoupling cp;
  cp.aeff = te.aeff(0, 0);
  cp.mu = te.mu.values(0);
  cp.chi = &chi;
  FineOptions fo;
  fo.test_functions = tests;
  fo.boundary_tol = boundary_tol;
  if (diag) {
    psi = compute_psi21(flux_series(model, chi), te.aeff);
    chi22 = solve_chi22(model, path, chi, te.aeff, b);
    cp.psi21 = &psi;
    cp.chi22 = &chi22;
    fo.solve_v = fo.solve_xi1 = fo.solve_xi2 = true;
  }
  const FineResult r = solve_fine(model, path, eps, g, dom, T, cp, fo);
  FineSample s;
  s.proj = r.proj_U;
  s.diag = diag;
  s.U_norm = r.U_norm;
  s.plain = r.u_minus_u0;
  s.corrected = r.u_minus_corrected;
  s.xi1 = r.xi1_norm;
  s.v_rem = r.v_remainder;
  s.v_scaled = r.v_scaled;
  s.chi21 = r.chi21_term;
  s.xi2_gap = r.xi2_gap;
  s.xi02 = r.xi02_norm;
  s.mass = r.mass_defect;
  s.maxp = r.max_principle_excess;
  s.bmass = r.boundary_mass;
  return s;
}

}  // namespace

Theorem2Report run_theorem2(const CoefficientModel& model, const TensorEstimate& tensors, const ExperimentConfig& cfg,
                            int workers, const Log& log) {
  const auto t0 = Clock::now();
  if (model.dimension() != 1) throw ConfigError("theorem2: the macroscopic solvers are one-dimensional");
  Theorem2Report rep;
  rep.model = model.name();
  rep.T = cfg.number("theorem2.T");
  rep.eps = cfg.numbers("theorem2.eps");
  rep.functionals = test_functionals(cfg);
  rep.aeff = tensors.aeff(0, 0);
  rep.mu = tensors.mu.values(0);
  rep.lambda = tensors.lambda.values(0, 0);
  rep.gap_limit = cfg.number("theorem2.variance_gap_max");
  rep.z_limit = cfg.number("theorem2.mean_z_max");
  rep.degenerate = !(rep.lambda > 0);
  const double L = cfg.number("theorem2.half_width");
  const InitialData g = initial_from(cfg);
  const SeedRange ensemble = cfg.seeds("theorem2");
  const auto counts = cfg.numbers("theorem2.seed_counts");
  const auto ndiag = std::size_t(cfg.integer("theorem2.diagnostic_seeds"));
  const double btol = cfg.number("theorem2.boundary_tol");
  const int M = model.grid().resolution();
  std::vector<std::function<double(double)>> tests;
  for (const auto& f : rep.functionals) tests.push_back(f);
  const Eigen::Index K = Eigen::Index(tests.size());

  // Resolve every eps before any work starts.
  std::vector<SpatialDomain> domains;
  for (double e : rep.eps) domains.push_back(SpatialDomain::fine(L, e, M));

  // U0 reference ensemble on the spectral box.
  {
    const auto ts = Clock::now();
    auto& u = rep.u0;
    u.dt = cfg.number("theorem2.spde_dt");
    u.points = Eigen::Index(cfg.integer("theorem2.spde_points"));
    u.seeds = std::size_t(cfg.integer("theorem2.spde_count"));
    const SeedRange sp = cfg.seeds("spde").head(u.seeds, "theorem2.spde_count");
    const SpatialDomain box = SpatialDomain::spectral(L, u.points);
    SpectralOptions so;
    so.test_functions = tests;
    const auto rows = parallel_map<Vec>(u.seeds, workers, [&](std::size_t i) {
      const WienerPath w = sample_wiener(1, rep.T, u.dt, sp[i]);
      return Vec(solve_spde(rep.aeff, rep.mu, tensors.lambda.sqrt, g, box, rep.T, w, so).projections);
    });
    u.proj.resize(Eigen::Index(u.seeds), K);
    for (std::size_t i = 0; i < rows.size(); ++i) u.proj.row(Eigen::Index(i)) = rows[i].transpose();
    u.mean = u.mean_se = u.variance = u.variance_se = Vec::Zero(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Moments mo = moments(u.proj.col(k));
      u.mean(k) = mo.mean;
      u.variance(k) = mo.variance;
      u.mean_se(k) = mo.variance > 0 ? mo.mean_se() : 0.0;
      u.variance_se(k) = mo.variance > 0 ? mo.variance_se() : 0.0;
    }
    u.closed_form = predict_u0_moments(rep.aeff, rep.mu, rep.lambda, g, L, rep.T, rep.functionals);
    log("theorem2: U0 ensemble " + std::to_string(u.seeds) + " paths (" + fmt(since(ts), 3) + " s)");
  }

  for (std::size_t ie = 0; ie < rep.eps.size(); ++ie) {
    const auto ts = Clock::now();
    Theorem2Report::PerEps pe;
    pe.eps = rep.eps[ie];
    pe.seeds = std::size_t(counts[ie]);
    rep.seed_counts.push_back(pe.seeds);
    const SeedRange seeds = ensemble.head(pe.seeds, "theorem2.seed_counts");
    const std::size_t nd = std::min(ndiag, pe.seeds);
    log("theorem2: eps " + fmt(pe.eps) + ", " + std::to_string(pe.seeds) + " seeds (" + std::to_string(nd) +
        " with diagnostics)");
    const auto samples = parallel_map<FineSample>(pe.seeds, workers, [&](std::size_t i) {
      return fine_sample(model, tensors, pe.eps, rep.T, seeds[i], i < nd, g, domains[ie], tests, btol);
    });
    pe.proj.resize(Eigen::Index(pe.seeds), K);
    std::vector<double> xi1;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      pe.proj.row(Eigen::Index(i)) = s.proj.transpose();
      pe.U_norm += s.U_norm / double(pe.seeds);
      pe.u_minus_u0 += s.plain / double(pe.seeds);
      pe.u_minus_corrected += s.corrected / double(pe.seeds);
      pe.mass_defect = std::max(pe.mass_defect, s.mass);
      pe.max_principle_excess = std::max(pe.max_principle_excess, s.maxp);
      pe.boundary_mass = std::max(pe.boundary_mass, s.bmass);
      if (s.diag) {
        xi1.push_back(s.xi1);
        pe.v_remainder += s.v_rem;
        pe.v_scaled += s.v_scaled;
        pe.chi21_term += s.chi21;
        pe.xi2_gap += s.xi2_gap;
        pe.xi02 += s.xi02;
      }
    }
    pe.diagnostic_seeds = xi1.size();
    if (!xi1.empty()) {
      const double k = double(xi1.size());
      pe.xi1 = mean_of(xi1);
      pe.xi1_se = se_of(xi1);
      pe.v_remainder /= k;
      pe.v_scaled /= k;
      pe.chi21_term /= k;
      pe.xi2_gap /= k;
      pe.xi02 /= k;
    }
    pe.mean = pe.mean_se = pe.variance = pe.variance_se = pe.gap = pe.gap_se = pe.mean_z = pe.ks = pe.ks_p =
        Vec::Zero(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      const Moments mo = moments(pe.proj.col(k));
      pe.mean(k) = mo.mean;
      pe.variance(k) = mo.variance;
      pe.mean_se(k) = mo.variance > 0 ? mo.mean_se() : 0.0;
      pe.variance_se(k) = mo.variance > 0 ? mo.variance_se() : 0.0;
      const double v0 = rep.u0.variance(k);
      if (rep.degenerate) {
        pe.gap(k) = mo.variance;
        pe.gap_se(k) = pe.variance_se(k);
      } else {
        pe.gap(k) = std::abs(mo.variance - v0) / v0;
        const double r = mo.variance / v0;
        pe.gap_se(k) = r * std::sqrt(std::pow(pe.variance_se(k) / mo.variance, 2) +
                                     std::pow(rep.u0.variance_se(k) / v0, 2));
      }
      const double se = std::hypot(pe.mean_se(k), rep.u0.mean_se(k));
      const double d = mo.mean - rep.u0.mean(k);
      pe.mean_z(k) = se > 0 ? d / se : (d == 0 ? 0.0 : std::copysign(INFINITY, d));
      std::vector<double> a(pe.proj.col(k).data(), pe.proj.col(k).data() + pe.proj.rows());
      std::vector<double> c(rep.u0.proj.col(k).data(), rep.u0.proj.col(k).data() + rep.u0.proj.rows());
      const KsResult ks = ks_two_sample(a, c);
      pe.ks(k) = ks.statistic;
      pe.ks_p(k) = ks.p_value;
    }
    pe.seconds = since(ts);
    std::ostringstream gaps;
    for (Eigen::Index k = 0; k < K; ++k) gaps << (k ? ", " : "") << fmt(pe.gap(k), 3);
    log("theorem2: eps " + fmt(pe.eps) + " done in " + fmt(pe.seconds, 4) + " s; variance gaps [" + gaps.str() +
        "], |Xi_eps1| " + fmt(pe.xi1, 4));
    rep.per_eps.push_back(std::move(pe));
  }

  // Verdicts: gaps strictly decreasing along the descending eps list, small
  // at the smallest eps; mean gap and Xi_{eps,1} at the smallest eps.
  rep.variance_decreasing = rep.variance_small = rep.mean_ok = true;
  const auto& last = rep.per_eps.back();
  for (Eigen::Index k = 0; k < K; ++k) {
    for (std::size_t ie = 1; ie < rep.per_eps.size(); ++ie)
      if (!(rep.per_eps[ie].gap(k) < rep.per_eps[ie - 1].gap(k)) &&
          !(rep.degenerate && rep.per_eps[ie].gap(k) == 0 && rep.per_eps[ie - 1].gap(k) == 0))
        rep.variance_decreasing = false;
    const double limit = rep.degenerate ? 1e-12 : rep.gap_limit;
    if (!(last.gap(k) <= limit)) rep.variance_small = false;
    if (!(std::abs(last.mean_z(k)) < rep.z_limit) && !(rep.degenerate && std::isnan(last.mean_z(k))))
      rep.mean_ok = false;
  }
  rep.xi1_decreasing = true;
  for (std::size_t ie = 1; ie < rep.per_eps.size(); ++ie)
    if (!(rep.per_eps[ie].xi1 < rep.per_eps[ie - 1].xi1)) rep.xi1_decreasing = false;
  if (rep.per_eps.front().diagnostic_seeds == 0) rep.xi1_decreasing = false;
  rep.seconds = since(t0);
  return rep;
}

// ---------------------------------------------------------------------------
// First-order rate

json RatesReport::to_json() const {
  json j;
  j["model"] = model;
  j["eps"] = eps;
  j["seeds"] = seeds;
  j["aeff"] = aeff;
  j["plain"] = harness::to_json(plain);
  j["corrected"] = harness::to_json(corrected);
  j["slope"] = {{"value", slope}, {"se", slope_se}, {"ci95", {slope_lo, slope_hi}}};
  j["corrected_slope"] = {{"value", corrected_slope}, {"se", corrected_slope_se}};
  j["corrector_helps"] = corrector_helps;
  j["target"] = {{"slope", target}, {"tol", tol}};
  j["pass"] = pass;
  j["seconds"] = seconds;
  return j;
}

CsvTable RatesReport::table() const {
  CsvTable t({"eps", "seed", "u_minus_u0", "u_minus_u0_minus_eps_chi_du0"});
  for (Eigen::Index s = 0; s < plain.rows(); ++s)
    for (Eigen::Index e = 0; e < plain.cols(); ++e)
      t.row({eps[std::size_t(e)], seeds[std::size_t(s)], plain(s, e), corrected(s, e)});
  return t;
}

RatesReport run_rates(const CoefficientModel& model, const TensorEstimate& tensors, const ExperimentConfig& cfg,
                      int workers, const Log& log) {
  const auto t0 = Clock::now();
  if (model.dimension() != 1) throw ConfigError("rates: the macroscopic solvers are one-dimensional");
  RatesReport rep;
  rep.model = model.name();
  rep.eps = cfg.numbers("rates.eps");
  rep.target = cfg.number("rates.slope");
  rep.tol = cfg.number("rates.slope_tol");
  rep.aeff = tensors.aeff(0, 0);
  const SeedRange sr = cfg.seeds("rates");
  for (std::size_t i = 0; i < sr.size(); ++i) rep.seeds.push_back(sr[i]);
  const double T = cfg.number("rates.T"), L = cfg.number("rates.half_width");
  const InitialData g = initial_from(cfg);
  const double ds = model.driver().ds;
  const double b = default_burn_in(model, ds);
  const int M = model.grid().resolution();
  const std::size_t ne = rep.eps.size();
  std::vector<SpatialDomain> domains;
  for (double e : rep.eps) domains.push_back(SpatialDomain::fine(L, e, M));

  const auto res = parallel_map<std::pair<double, double>>(sr.size() * ne, workers, [&](std::size_t job) {
    const std::size_t s = job / ne, e = job % ne;
    const double eps = rep.eps[e];
    const double S = T / (eps * eps);
    const DriverPath path = driver_path(model, sr[s], b, S);
    CorrectorOptions o;
    o.horizon = S;
    const CorrectorTrajectory chi = solve_parabolic_corrector(model, path, o);
    FineCoupling cp;
    cp.aeff = rep.aeff;
    cp.chi = &chi;
    const FineResult r = solve_fine(model, path, eps, g, domains[e], T, cp, FineOptions{});
    return std::make_pair(r.u_minus_u0, r.u_minus_corrected);
  });
  rep.plain.resize(Eigen::Index(sr.size()), Eigen::Index(ne));
  rep.corrected.resizeLike(rep.plain);
  for (std::size_t job = 0; job < res.size(); ++job) {
    rep.plain(Eigen::Index(job / ne), Eigen::Index(job % ne)) = res[job].first;
    rep.corrected(Eigen::Index(job / ne), Eigen::Index(job % ne)) = res[job].second;
  }
  Vec le(static_cast<Eigen::Index>(ne));
  for (std::size_t e = 0; e < ne; ++e) le(Eigen::Index(e)) = std::log(rep.eps[e]);
  std::vector<double> slopes, cslopes;
  double reg_se = 0, creg_se = 0;
  for (Eigen::Index s = 0; s < rep.plain.rows(); ++s) {
    const LinearFit f = linear_fit(le, rep.plain.row(s).transpose().array().log().matrix());
    const LinearFit c = linear_fit(le, rep.corrected.row(s).transpose().array().log().matrix());
    slopes.push_back(f.slope);
    cslopes.push_back(c.slope);
    reg_se = f.slope_se;
    creg_se = c.slope_se;
  }
  rep.slope = mean_of(slopes);
  rep.corrected_slope = mean_of(cslopes);
  double half;
  if (slopes.size() >= 2) {
    rep.slope_se = se_of(slopes);
    rep.corrected_slope_se = se_of(cslopes);
    half = t975(int(slopes.size()) - 1) * rep.slope_se;
  } else {
    rep.slope_se = reg_se;
    rep.corrected_slope_se = creg_se;
    half = t975(int(ne) - 2) * rep.slope_se;
  }
  rep.slope_lo = rep.slope - half;
  rep.slope_hi = rep.slope + half;
  rep.corrector_helps = (rep.corrected.array() < rep.plain.array()).all();
  rep.pass = std::abs(rep.slope - rep.target) <= rep.tol;
  rep.seconds = since(t0);
  log("rates[" + rep.model + "]: slope " + fmt(rep.slope, 4) + " (corrected " + fmt(rep.corrected_slope, 4) + ")");
  return rep;
}

// ---------------------------------------------------------------------------
// SPDE strong rate

json SpdeRateReport::to_json() const {
  json j;
  j["dt"] = dt;
  j["seeds"] = seeds;
  j["reference_dt"] = reference_dt;
  j["space_time_error"] = harness::to_json(error);
  j["space_time_error_se"] = harness::to_json(error_se);
  j["grid_error"] = harness::to_json(grid_error);
  j["grid_error_se"] = harness::to_json(grid_error_se);
  j["halving_rate"] = harness::to_json(halving_rate);
  j["fitted_rate"] = {{"value", rate}, {"se", rate_se}};
  j["grid_fitted_rate"] = grid_rate;
  j["target"] = {{"rate", target}, {"tol", tol}};
  j["pass"] = pass;
  j["seconds"] = seconds;
  return j;
}

CsvTable SpdeRateReport::table() const {
  CsvTable t({"dt", "space_time_error", "space_time_error_se", "grid_error", "grid_error_se", "halving_rate"});
  for (std::size_t i = 0; i < dt.size(); ++i) {
    const auto k = Eigen::Index(i);
    t.row({dt[i], error(k), error_se(k), grid_error(k), grid_error_se(k),
           i == 0 ? json(nullptr) : json(halving_rate(k - 1))});
  }
  return t;
}

SpdeRateReport run_spde_rate(const TensorEstimate& tensors, const ExperimentConfig& cfg, int workers, const Log& log) {
  const auto t0 = Clock::now();
  SpdeRateReport rep;
  rep.dt = cfg.numbers("spde_rate.dt");
  std::sort(rep.dt.rbegin(), rep.dt.rend());
  rep.target = cfg.number("spde_rate.rate");
  rep.tol = cfg.number("spde_rate.rate_tol");
  const double T = cfg.number("spde_rate.T");
  const auto refine = cfg.integer("spde_rate.refinement");
  rep.reference_dt = rep.dt.back() / double(refine);
  std::vector<Eigen::Index> factor;
  for (double d : rep.dt) {
    const double f = d / rep.reference_dt;
    if (std::abs(f - std::round(f)) > 1e-9 * f) throw ConfigError("spde_rate: steps must be multiples of the reference step");
    factor.push_back(Eigen::Index(std::llround(f)));
  }
  const SpatialDomain box =
      SpatialDomain::spectral(cfg.number("spde_rate.half_width"), Eigen::Index(cfg.integer("spde_rate.points")));
  const InitialData g = initial_from(cfg);
  const double aeff = tensors.aeff(0, 0), mu = tensors.mu.values(0);
  const Mat& lsq = tensors.lambda.sqrt;
  if (!(lsq(0, 0) > 0)) throw ConfigError("spde_rate: needs a non-degenerate Lambda");
  const SeedRange sr = cfg.seeds("spde_rate");
  rep.seeds = sr.size();
  const std::size_t nd = rep.dt.size();
  const double h = box.spacing();

  SpectralOptions so;
  so.stride = 1;
  const auto errs = parallel_map<Vec>(rep.seeds, workers, [&](std::size_t i) {
    const WienerPath w = sample_wiener(1, T, rep.reference_dt, sr[i]);
    const Eigen::Index Kr = w.steps();
    std::vector<Eigen::Index> all(std::size_t(Kr + 1));
    for (Eigen::Index k = 0; k <= Kr; ++k) all[std::size_t(k)] = k;
    const Mat ex = spde_exact(aeff, mu, lsq, g, box, w, all).values;
    Vec out(2 * Eigen::Index(nd));
    for (std::size_t d = 0; d < nd; ++d) {
      const Eigen::Index f = factor[d];
      const Mat U = solve_spde(aeff, mu, lsq, g, box, T, w.aggregate(f), so).U.values;
      double st = 0, gr = 0;
      for (Eigen::Index k = 0; k <= Kr; ++k) {
        const Eigen::Index j = std::min<Eigen::Index>(k / f, U.cols() - 2);
        const double th = double(k - j * f) / double(f);
        const double e2 = ((1 - th) * U.col(j) + th * U.col(j + 1) - ex.col(k)).squaredNorm() * h;
        st += (k == 0 || k == Kr ? 0.5 : 1.0) * rep.reference_dt * e2;
        if (k % f == 0) gr += (k == 0 || k == Kr ? 0.5 : 1.0) * rep.dt[d] * e2;
      }
      out(Eigen::Index(d)) = st;
      out(Eigen::Index(nd + d)) = gr;
    }
    return out;
  });
  rep.error = rep.error_se = rep.grid_error = rep.grid_error_se = Vec::Zero(Eigen::Index(nd));
  for (std::size_t d = 0; d < nd; ++d)
    for (int which = 0; which < 2; ++which) {
      std::vector<double> xs;
      for (const auto& e : errs) xs.push_back(e(Eigen::Index(which * nd + d)));
      const double m = mean_of(xs), s = se_of(xs);
      const double e = std::sqrt(m), se = m > 0 ? s / (2 * e) : 0.0;
      (which ? rep.grid_error : rep.error)(Eigen::Index(d)) = e;
      (which ? rep.grid_error_se : rep.error_se)(Eigen::Index(d)) = se;
    }
  rep.halving_rate = Vec::Zero(Eigen::Index(nd - 1));
  rep.pass = true;
  for (std::size_t d = 0; d + 1 < nd; ++d) {
    const auto k = Eigen::Index(d);
    rep.halving_rate(k) = std::log(rep.error(k) / rep.error(k + 1)) / std::log(rep.dt[d] / rep.dt[d + 1]);
    if (!(std::abs(rep.halving_rate(k) - rep.target) <= rep.tol)) rep.pass = false;
  }
  Vec ld(static_cast<Eigen::Index>(nd));
  for (std::size_t d = 0; d < nd; ++d) ld(Eigen::Index(d)) = std::log(rep.dt[d]);
  const LinearFit f = linear_fit(ld, rep.error.array().log().matrix());
  rep.rate = f.slope;
  rep.rate_se = f.slope_se;
  rep.grid_rate = linear_fit(ld, rep.grid_error.array().log().matrix()).slope;
  if (!(std::abs(rep.rate - rep.target) <= rep.tol)) rep.pass = false;
  rep.seconds = since(t0);
  log("spde_rate: space-time rate " + fmt(rep.rate, 4) + ", grid-point rate " + fmt(rep.grid_rate, 4));
  return rep;
}

// ---------------------------------------------------------------------------
// Cell-problem checks

CorrectorChecks run_corrector_checks(const CoefficientModel& model, const ExperimentConfig& cfg) {
  CorrectorChecks c;
  const double ds = model.driver().ds;
  const double b = default_burn_in(model, ds);
  const double H = cfg.number("corrector.horizon");
  const SeedRange sr = cfg.seeds("corrector");
  for (std::size_t i = 0; i < sr.size(); ++i) {
    const DriverPath path = driver_path(model, sr[i], b, H);
    CorrectorOptions o;
    o.horizon = H;
    o.init_seed = sr[i];
    c.uniqueness_gap = std::max(c.uniqueness_gap, corrector_uniqueness_gap(model, path, o));
    c.max_mean_drift = std::max(c.max_mean_drift, solve_parabolic_corrector(model, path, o).max_mean_drift);
    ++c.paths;
  }
  c.pass = c.uniqueness_gap <= cfg.number("corrector.uniqueness_tol") &&
           c.max_mean_drift <= cfg.number("corrector.drift_tol");
  return c;
}

InitialLayerChecks run_initial_layer_checks(const CoefficientModel& model, const ExperimentConfig& cfg) {
  InitialLayerChecks r;
  {
    const double ds = model.driver().ds;
    const double b = default_burn_in(model, ds);
    const double span = cfg.number("initial_layer.r1_span");
    const DriverPath path = driver_path(model, cfg.seeds("corrector").first, b, span);
    CorrectorOptions o;
    o.horizon = ds;
    const CorrectorTrajectory chi = solve_parabolic_corrector(model, path, o);
    r.r1_rate = solve_initial_layer(model, path, chi.values.front(), span).nu_hat;
  }
  {
    const int M = int(cfg.integer("initial_layer.resolution"));
    const double ds = cfg.number("initial_layer.ds");
    const double span = cfg.number("initial_layer.span");
    const CoefficientModel id = make_constant(Mat::Identity(1, 1), M, ds);
    const DriverPath path = driver_path(id, 1, 0.0, span);
    Mat mode(M, 1);
    for (int m = 0; m < M; ++m) mode(m, 0) = std::sin(2.0 * EIGEN_PI * double(m) / double(M));
    r.eigen_rate = solve_initial_layer(id, path, mode, span).nu_hat;
    r.eigen_target = 4.0 * EIGEN_PI * EIGEN_PI;
    r.eigen_rel_error = std::abs(r.eigen_rate - r.eigen_target) / r.eigen_target;
  }
  r.pass = r.r1_rate > 0 && r.eigen_rel_error <= cfg.number("initial_layer.rate_tol");
  return r;
}

JointCheck run_joint_check(const ExperimentConfig& cfg) {
  JointCheck j;
  j.gamma = cfg.number("joint.gamma");
  j.ds = cfg.number("joint.ds");
  j.horizon = cfg.number("joint.horizon");
  j.ny = int(cfg.integer("joint.ny"));
  json section = cfg.at("model");
  section["name"] = cfg.text("joint.model");
  section["gamma"] = j.gamma;
  section["ds"] = j.ds;
  const CoefficientModel model = model_from_config(section);
  const JointCorrector jc = solve_joint_corrector_1d(model, cfg.number("joint.half_width"), j.ny);
  j.joint = jc.aeff;
  j.joint_residual = jc.residual;
  j.outside_mass = jc.outside_mass;
  const double b = default_burn_in(model, j.ds);
  const DriverPath path = driver_path(model, cfg.seeds("joint").first, b, j.horizon);
  const auto batches = cfg.integer("estimation.batches");
  BatchMeans bm(1, std::max<std::int64_t>(1, steps_of(j.horizon, j.ds) / batches));
  stream_flux(model, path, 0.0, b, j.horizon, [&](double, const Vec& F) { bm.push(F); });
  j.ergodic = bm.mean()(0);
  j.ergodic_se = bm.standard_error()(0);
  j.z = std::abs(j.joint - j.ergodic) / j.ergodic_se;
  j.pass = j.z <= cfg.number("joint.factor");
  return j;
}

DegenerateCheck run_degenerate_check(const ExperimentConfig& cfg) {
  DegenerateCheck d;
  json section = cfg.at("model");
  section["name"] = cfg.text("degenerate.model");
  section["gamma"] = nullptr;
  const CoefficientModel model = model_from_config(section);
  d.model = model.name();
  if (!model.time_independent()) throw ConfigError("degenerate: the model must be time-independent (Lambda = 0)");
  const EllipticResult el = solve_elliptic_corrector(model.evaluate(y_origin(model)));
  d.aeff = el.aeff(0, 0);
  d.mu = mu_elliptic(model.evaluate(y_origin(model)), el.aeff).values(0);
  const double T = cfg.number("degenerate.T"), dt = cfg.number("degenerate.dt");
  const SpatialDomain box =
      SpatialDomain::spectral(cfg.number("degenerate.half_width"), Eigen::Index(cfg.integer("degenerate.points")));
  const InitialData g = initial_from(cfg);
  SpectralOptions so;
  so.stride = 1;
  const WienerPath w = sample_wiener(1, T, dt, cfg.seeds("spde").first);
  const Mat U = solve_spde(d.aeff, d.mu, Mat::Zero(1, 1), g, box, T, w, so).U.values;
  const Mat X = solve_xi02(d.aeff, d.mu, g, box, T, dt, so).values;
  d.xi02_norm = X.norm();
  d.relative_l2 = (U - X).norm() / d.xi02_norm;
  d.pass = d.xi02_norm > 0 && d.relative_l2 <= cfg.number("degenerate.tol");
  return d;
}

json run_corrector_dump(const CoefficientModel& model, const ExperimentConfig& cfg, const std::string& out_dir) {
  const double ds = model.driver().ds;
  const double b = default_burn_in(model, ds);
  const double H = cfg.number("corrector.horizon");
  const std::uint64_t seed = cfg.seeds("corrector").first;
  const DriverPath path = driver_path(model, seed, b, H);
  CorrectorOptions o;
  o.horizon = H;
  o.retain_stride = Eigen::Index(cfg.integer("corrector.dump_stride"));
  const CorrectorTrajectory chi = solve_parabolic_corrector(model, path, o);
  const int n = model.dimension();
  const std::string hash = cfg.hash_hex();

  std::vector<std::string> head{"s"};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) head.push_back("F" + std::to_string(i) + std::to_string(j));
  CsvTable flux(head);
  for (Eigen::Index r = 0; r < chi.flux.rows(); ++r) {
    std::vector<json> row{chi.flux_times[std::size_t(r)]};
    for (Eigen::Index c = 0; c < chi.flux.cols(); ++c) row.push_back(chi.flux(r, c));
    flux.row(row);
  }
  flux.write(join_path(out_dir, "corrector_flux.csv"), hash);
  const Eigen::Index N = model.grid().size();
  Mat all(N, chi.retained() * n);
  for (Eigen::Index r = 0; r < chi.retained(); ++r) all.middleCols(r * n, n) = chi.values[std::size_t(r)];
  write_binary_matrix(join_path(out_dir, "corrector_values.bin"), all,
                      {{"layout", "grid nodes x (time * n + component)"},
                       {"times", chi.times},
                       {"resolution", model.grid().resolution()},
                       {"dimension", n}},
                      hash);
  json j = {{"model", model.name()},
            {"seed", seed},
            {"ds", ds},
            {"burn_in", chi.burn_in},
            {"horizon", H},
            {"retained", chi.retained()},
            {"max_mean_drift", chi.max_mean_drift},
            {"sup_l2", chi.sup_l2},
            {"sup_linf", chi.sup_linf},
            {"mean_flux", harness::to_json(Vec(chi.flux.colwise().mean().transpose()))}};
  write_json_report(join_path(out_dir, "corrector.json"), j, hash);
  return j;
}

}  // namespace parahom::harness
