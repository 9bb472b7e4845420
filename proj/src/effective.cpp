#include "parahom/effective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace parahom {

namespace {

Mat unflatten(const Vec& v, int n) {
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = v(i * n + j);
  return m;
}

Eigen::Index steps_for(double span, double ds) {
  return static_cast<Eigen::Index>(std::llround(span / ds));
}

std::int64_t batch_length(Eigen::Index count, Eigen::Index batches) {
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(count / std::max<Eigen::Index>(batches, 2)));
}

}  // namespace

std::string route_name(AeffRoute r) {
  switch (r) {
    case AeffRoute::ParabolicAverage: return "parabolic-average";
    case AeffRoute::Reversed: return "reversed";
    case AeffRoute::EllipticFrozen: return "elliptic-frozen";
    case AeffRoute::AveragedCoefficient: return "averaged-coefficient";
    case AeffRoute::JointCorrector: return "joint-corrector";
  }
  return "unknown";
}

FluxSeries flux_series(const CoefficientModel& model, const CorrectorTrajectory& chi) {
  if (chi.grid != model.grid()) throw std::invalid_argument("flux_series: grid mismatch");
  FluxSeries fs;
  fs.n = model.dimension();
  fs.ds = chi.ds;
  fs.correlation_time = model.time_independent() ? 0.0 : model.driver().correlation_time();
  fs.times = chi.flux_times;
  fs.values = chi.flux;
  return fs;
}

EffectiveMatrix estimate_aeff(const FluxSeries& series, const AeffOptions& opts) {
  const int n = series.n;
  const Eigen::Index K = series.size();
  if (K < 2 * std::max<Eigen::Index>(opts.batches, 2))
    throw std::invalid_argument("estimate_aeff: series too short for batch means");
  if (series.correlation_time > 0 &&
      series.horizon() < opts.min_correlation_times * series.correlation_time * (1 - 1e-9))
    throw std::invalid_argument("estimate_aeff: horizon below the configured minimum");

  const std::int64_t len = batch_length(K, opts.batches);
  BatchMeans bm(n * n, len);
  for (Eigen::Index k = 0; k < K; ++k) bm.push(series.values.row(k).transpose());

  EffectiveMatrix em;
  em.route = AeffRoute::ParabolicAverage;
  em.horizon = series.horizon();
  const Mat mean = unflatten(bm.mean(), n);
  Mat se = unflatten(bm.standard_error(), n);
  em.values = 0.5 * (mean + mean.transpose());
  em.standard_error = 0.5 * (se + se.transpose());
  em.asymmetry = 0.5 * (mean - mean.transpose()).cwiseAbs().maxCoeff();
  em.asymmetry_flagged = em.asymmetry > 3.0 * em.standard_error.maxCoeff() + 1e-12;

  const auto [h1, h2] = bm.half_means();
  const auto [e1, e2] = bm.half_errors();
  for (int c = 0; c < n * n; ++c) {
    const double gap = std::abs(h1(c) - h2(c));
    const double tol = opts.cauchy_z * std::sqrt(e1(c) * e1(c) + e2(c) * e2(c)) +
                       1e-12 * std::max(1.0, std::abs(h1(c)));
    if (!(gap <= tol))
      throw NonStationarityError("estimate_aeff: running mean fails the Cauchy check (entry " +
                                 std::to_string(c) + ")");
  }
  return em;
}

EquivalenceReport aeff_equivalence(const FluxSeries& forward, const FluxSeries& reversed,
                                   const AeffOptions& opts, double factor, bool strict) {
  if (forward.n != reversed.n || forward.size() != reversed.size())
    throw std::invalid_argument("aeff_equivalence: series do not match");
  EquivalenceReport rep;
  rep.factor = factor;
  rep.forward = estimate_aeff(forward, opts);
  rep.reversed = estimate_aeff(reversed, opts);
  rep.reversed.route = AeffRoute::Reversed;
  rep.difference = rep.forward.values - rep.reversed.values;
  rep.combined_se = (rep.forward.standard_error.cwiseAbs2() + rep.reversed.standard_error.cwiseAbs2()).cwiseSqrt();
  rep.agree = true;
  for (Eigen::Index i = 0; i < rep.difference.size(); ++i) {
    const double d = std::abs(rep.difference(i)), s = rep.combined_se(i);
    const double z = s > 0 ? d / s : (d > 1e-12 ? INFINITY : 0.0);
    rep.max_z = std::max(rep.max_z, z);
    if (!(d <= factor * s + 1e-12)) rep.agree = false;
  }
  if (strict && !rep.agree)
    throw std::runtime_error("aeff_equivalence: forward and reversed routes disagree");
  return rep;
}

FluctuationSeries compute_psi21(const FluxSeries& flux, const Mat& aeff) {
  const int n = flux.n;
  if (aeff.rows() != n || aeff.cols() != n) throw std::invalid_argument("compute_psi21: aeff must be n x n");
  FluctuationSeries ps;
  ps.n = n;
  ps.ds = flux.ds;
  ps.times = flux.times;
  ps.values = flux.values;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) ps.values.col(i * n + j).array() -= aeff(i, j);
  return ps;
}

Mat chi21_cumulative(const FluctuationSeries& psi) {
  const Eigen::Index K = psi.size();
  const Eigen::Index p = psi.values.cols();
  Mat out = Mat::Zero(K + 1, p);
  for (Eigen::Index r = 1; r < K; ++r)
    out.row(r) = out.row(r - 1) + 0.5 * psi.ds * (psi.values.row(r - 1) + psi.values.row(r));
  // Closing half interval with the last value held.
  if (K > 0) out.row(K) = out.row(K - 1) + psi.ds * psi.values.row(K - 1);
  return out;
}

namespace {

/// Pooled symmetric autocovariance sequence C_sym(k), k = 0..L.
std::vector<Mat> pooled_sym_autocov(const std::vector<const Mat*>& parts, Eigen::Index L) {
  const Eigen::Index p = parts.front()->cols();
  std::vector<Mat> acc(L + 1, Mat::Zero(p, p));
  std::vector<double> weight(L + 1, 0.0);
  for (const Mat* x : parts) {
    const auto c = autocovariance(*x, L, false);
    for (Eigen::Index k = 0; k <= L; ++k) {
      const double w = double(x->rows() - k);
      acc[k] += w * (c[k] + c[k].transpose());
      weight[k] += w;
    }
  }
  for (Eigen::Index k = 0; k <= L; ++k) acc[k] /= weight[k];
  return acc;
}

Mat trapezoid(const std::vector<Mat>& c, double ds) {
  const Eigen::Index L = static_cast<Eigen::Index>(c.size()) - 1;
  Mat s = 0.5 * (c[0] + c[L]);
  for (Eigen::Index k = 1; k < L; ++k) s += c[k];
  return ds * s;
}

}  // namespace

LambdaTensor estimate_lambda(const std::vector<FluctuationSeries>& series, double max_lag,
                             const LambdaOptions& opts) {
  if (series.empty()) throw std::invalid_argument("estimate_lambda: no series");
  const double ds = series.front().ds;
  const Eigen::Index p = series.front().values.cols();
  Eigen::Index total = 0, shortest = std::numeric_limits<Eigen::Index>::max();
  for (const auto& s : series) {
    if (s.values.cols() != p || std::abs(s.ds - ds) > 1e-15) throw std::invalid_argument("estimate_lambda: inconsistent series");
    total += s.size();
    shortest = std::min(shortest, s.size());
  }
  const Eigen::Index L = steps_for(max_lag, ds);
  if (L < 1) throw std::invalid_argument("estimate_lambda: max_lag below one step");
  if (double(total) < opts.min_horizon_lags * double(L) || shortest <= L)
    throw std::invalid_argument("estimate_lambda: horizon must be at least 50 max_lag");
  if (opts.correlation_time > 0 && max_lag < opts.min_lag_correlation_times * opts.correlation_time * (1 - 1e-9))
    throw std::invalid_argument("estimate_lambda: max_lag below 20 driver correlation times");

  LambdaTensor lt;
  lt.max_lag = double(L) * ds;
  lt.samples = total;
  std::vector<const Mat*> parts;
  for (const auto& s : series) parts.push_back(&s.values);
  const std::vector<Mat> csym = pooled_sym_autocov(parts, L);
  lt.raw = trapezoid(csym, ds);
  lt.raw = 0.5 * (lt.raw + lt.raw.transpose());

  // Replicate estimates: per series when there are enough, otherwise blocks.
  std::vector<Mat> reps;
  if (series.size() >= 4) {
    for (const auto& s : series) reps.push_back(trapezoid(pooled_sym_autocov({&s.values}, L), ds));
  } else {
    for (const auto& s : series) {
      const Eigen::Index nblk = std::min<Eigen::Index>(8, s.size() / (std::max<Eigen::Index>(L, 1) * 10));
      if (nblk < 2) continue;
      const Eigen::Index len = s.size() / nblk;
      for (Eigen::Index b = 0; b < nblk; ++b) {
        const Mat block = s.values.middleRows(b * len, len);
        reps.push_back(trapezoid(pooled_sym_autocov({&block}, L), ds));
      }
    }
  }
  lt.standard_error = Mat::Constant(p, p, std::numeric_limits<double>::infinity());
  if (reps.size() >= 2) {
    Mat m = Mat::Zero(p, p), v = Mat::Zero(p, p);
    for (const auto& r : reps) m += r;
    m /= double(reps.size());
    for (const auto& r : reps) v += (r - m).cwiseAbs2();
    v /= double(reps.size() - 1);
    lt.standard_error = (v / double(reps.size())).cwiseSqrt();
  }

  lt.values = psd_project(lt.raw, &lt.clipped);
  lt.sqrt = psd_sqrt(lt.values);
  const double se_scale = lt.standard_error.allFinite() ? lt.standard_error.maxCoeff() : 0.0;
  lt.clip_flagged = -lt.clipped > opts.clip_flag_se * se_scale + 1e-14;

  // Tail test against a Bartlett-type noise floor of the lag-L autocovariance.
  lt.tail = 0;
  lt.noise_floor = 0;
  lt.tail_ok = true;
  for (Eigen::Index a = 0; a < p; ++a) {
    double ss = 0.5 * csym[0](a, a) * csym[0](a, a);
    for (Eigen::Index k = 1; k <= L; ++k) ss += csym[k](a, a) * csym[k](a, a);
    // C_sym = 2 C and Var(C_L) ~ (1/T) sum_{|m| <= L} C_m^2 at large lags.
    const double floor = std::sqrt(2.0 * ss / double(total));
    const double tail = std::abs(csym[L](a, a));
    lt.tail = std::max(lt.tail, tail);
    lt.noise_floor = std::max(lt.noise_floor, floor);
    if (tail > opts.tail_factor * floor + 1e-300) lt.tail_ok = false;
  }
  if (opts.strict_tail && !lt.tail_ok)
    throw std::runtime_error("estimate_lambda: autocovariance tail at max_lag exceeds the noise floor");
  return lt;
}

LambdaTensor estimate_lambda(const FluctuationSeries& series, double max_lag, const LambdaOptions& opts) {
  return estimate_lambda(std::vector<FluctuationSeries>{series}, max_lag, opts);
}

MuTensor compute_mu(const CoefficientModel& model, const DriverPath& path,
                    const CorrectorTrajectory& chi, const Chi22Trajectory& chi22, const Mat& aeff,
                    Eigen::Index batches) {
  const int n = model.dimension();
  if (chi.flux.rows() + 1 != chi.retained())
    throw std::invalid_argument("compute_mu: corrector must retain every step");
  if (chi22.grid != chi.grid) throw std::invalid_argument("compute_mu: grid mismatch");
  // chi22 times are a suffix of chi times; align on the first chi22 time.
  const double ds = chi.ds;
  const Eigen::Index offset = steps_for(chi22.times.front() - chi.times.front(), ds);
  const Eigen::Index count = chi22.retained() - 1;  // intervals after the first chi22 time
  if (count < 2 * batches) throw std::invalid_argument("compute_mu: horizon too short");
  CellStepper stepper(model);
  BatchMeans bm(n * n * n, batch_length(count, batches));
  for (Eigen::Index r = 0; r < count; ++r) {
    const Eigen::Index ci = offset + r;  // interval index in chi's flux series
    stepper.set_state(path.state(path.index_at(chi.flux_times[ci])));
    bm.push(stepper.mu_integrand(chi.values[ci + 1], chi22.values[r + 1], aeff));
  }
  MuTensor mu;
  mu.n = n;
  mu.values = bm.mean();
  mu.standard_error = bm.standard_error();
  mu.horizon = double(count) * ds;
  return mu;
}

MuTensor estimate_mu_streaming(const CoefficientModel& model, const DriverPath& path,
                               const Mat& aeff, double burn_chi, double burn_chi22, double horizon,
                               Eigen::Index batches) {
  const int n = model.dimension();
  const double ds = path.ds;
  const Eigen::Index b1 = steps_for(burn_chi, ds), b2 = steps_for(burn_chi22, ds), nh = steps_for(horizon, ds);
  const Eigen::Index n0 = path.index_at(0.0);
  if (n0 - b1 - b2 < 0 || n0 + nh > path.size() - 1)
    throw std::invalid_argument("estimate_mu_streaming: driver path does not cover burn-in and horizon");
  CellStepper stepper(model);
  const Eigen::Index N = model.grid().size();
  Mat chi = Mat::Zero(N, n), chi22 = Mat::Zero(N, n * n);
  BatchMeans bm(n * n * n, batch_length(nh, batches));
  for (Eigen::Index k = n0 - b1 - b2; k < n0 + nh; ++k) {
    stepper.set_state(path.state(k));
    stepper.advance_corrector(chi);
    if (k >= n0 - b2) {
      const Vec F = stepper.flux(chi);
      stepper.advance_forced(chi22, stepper.psi22(chi, F));
    }
    if (k >= n0) bm.push(stepper.mu_integrand(chi, chi22, aeff));
  }
  MuTensor mu;
  mu.n = n;
  mu.values = bm.mean();
  mu.standard_error = bm.standard_error();
  mu.horizon = double(nh) * ds;
  return mu;
}

MuTensor mu_elliptic(const Field& a, const Mat& aeff) {
  const int n = a.dimension();
  const EllipticResult ell = solve_elliptic_corrector(a);
  FluxOperator<double> op(a, true);
  // Psi22 for the static corrector, then -L chi22 = Psi22.
  const Eigen::Index N = a.grid().size();
  Mat chi = ell.chi.values();
  Mat chi22(N, n * n);
  for (int k = 0; k < n; ++k) {
    const Mat q = op.nodal_flux(chi.col(k), k);
    const Vec Fk = op.flux_mean(chi.col(k), k);
    for (int j = 0; j < n; ++j) {
      const Vec psi = q.col(j).array() - Fk(j) + op.divergence_of_product(j, chi.col(k)).array();
      chi22.col(j * n + k) = solve_elliptic(op, psi, 1e-13, 0);
    }
  }
  MuTensor mu;
  mu.n = n;
  mu.values.resize(n * n * n);
  mu.standard_error = Vec::Zero(n * n * n);
  // Same integrand as the time-marched route, evaluated once.
  Mat dv = Mat::Zero(N, n);
  if (n == 1) {
    dv.col(0) = op.nodal_flux(chi22.col(0), -1).col(0);
  } else {
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l)
        dv.col(k) += detail::partial<double>(a.grid(), chi22.col(l * n + k), l, DiffScheme::CentralDifference);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec aij = a.component(i * n + j);
        const double g = (n == 1) ? dv.col(0).mean() : aij.cwiseProduct(dv.col(k)).mean();
        mu.values((i * n + j) * n + k) = ((aij.array() - aeff(i, j)) * chi.col(k).array()).mean() + g;
      }
  return mu;
}

EffectiveMatrix frozen_ensemble_aeff(const CoefficientModel& model, const DriverPath& path,
                                     Eigen::Index stride, Eigen::Index batches) {
  const int n = model.dimension();
  if (stride < 1) throw std::invalid_argument("frozen_ensemble_aeff: stride must be >= 1");
  const Eigen::Index count = (path.size() - 1 + stride - 1) / stride;
  if (count < 2 * batches) throw std::invalid_argument("frozen_ensemble_aeff: not enough samples");
  BatchMeans bm(n * n, batch_length(count, batches));
  Field a(model.grid(), FieldRank::Matrix);
  Vec flat(n * n);
  for (Eigen::Index k = 0; k < path.size() - 1; k += stride) {
    model.evaluate_into(path.state(k), a);
    const EllipticResult e = solve_elliptic_corrector(a);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) flat(i * n + j) = e.aeff(i, j);
    bm.push(flat);
  }
  EffectiveMatrix em;
  em.route = AeffRoute::EllipticFrozen;
  const Mat m = unflatten(bm.mean(), n);
  em.values = 0.5 * (m + m.transpose());
  em.standard_error = unflatten(bm.standard_error(), n);
  em.horizon = double(path.size() - 1) * path.ds;
  em.asymmetry = 0.5 * (m - m.transpose()).cwiseAbs().maxCoeff();
  return em;
}

EffectiveMatrix averaged_coefficient_aeff(const CoefficientModel& model, const DriverPath& path) {
  const AveragedCorrector ac = solve_averaged_corrector(model, path);
  EffectiveMatrix em;
  em.route = AeffRoute::AveragedCoefficient;
  em.values = 0.5 * (ac.corrector.aeff + ac.corrector.aeff.transpose());
  em.standard_error = Mat::Zero(model.dimension(), model.dimension());
  em.horizon = double(path.size() - 1) * path.ds;
  return em;
}

}  // namespace parahom
