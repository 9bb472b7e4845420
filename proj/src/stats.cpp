#include "parahom/stats.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>

namespace parahom {

std::vector<Eigen::MatrixXd> autocovariance(const Eigen::MatrixXd& series, Eigen::Index max_lag,
                                            bool demean) {
  const Eigen::Index T = series.rows(), p = series.cols();
  if (max_lag < 0 || max_lag >= T) throw std::invalid_argument("autocovariance: max_lag out of range");
  Eigen::MatrixXd x = series;
  if (demean) x.rowwise() -= x.colwise().mean();

  Eigen::Index nfft = 1;
  while (nfft < T + max_lag + 1) nfft <<= 1;
  Eigen::FFT<double> fft;
  std::vector<std::vector<std::complex<double>>> spec(p);
  std::vector<double> buf(nfft);
  for (Eigen::Index c = 0; c < p; ++c) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (Eigen::Index t = 0; t < T; ++t) buf[t] = x(t, c);
    fft.fwd(spec[c], buf);
  }
  std::vector<Eigen::MatrixXd> out(max_lag + 1, Eigen::MatrixXd::Zero(p, p));
  std::vector<std::complex<double>> prod(nfft);
  std::vector<double> back(nfft);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index b = 0; b < p; ++b) {
      // sum_t x^a_t x^b_{t+k} is the inverse transform of conj(X^a) X^b.
      for (Eigen::Index m = 0; m < nfft; ++m) prod[m] = std::conj(spec[a][m]) * spec[b][m];
      fft.inv(back, prod);
      for (Eigen::Index k = 0; k <= max_lag; ++k) out[k](a, b) = back[k] / double(T - k);
    }
  return out;
}

BatchMeans::BatchMeans(int dimension, std::int64_t batch_length)
    : dim_(dimension), batch_(batch_length) {
  if (dimension <= 0 || batch_length <= 0) throw std::invalid_argument("BatchMeans: bad sizes");
  total_ = Eigen::VectorXd::Zero(dim_);
  partial_ = Eigen::VectorXd::Zero(dim_);
}

void BatchMeans::push(const Eigen::Ref<const Eigen::VectorXd>& x) {
  total_ += x;
  partial_ += x;
  ++count_;
  if (++partial_count_ == batch_) {
    batch_sums_.push_back(partial_);
    partial_.setZero();
    partial_count_ = 0;
  }
}

void BatchMeans::merge(const BatchMeans& later) {
  if (later.dim_ != dim_ || later.batch_ != batch_)
    throw std::invalid_argument("BatchMeans: incompatible accumulators");
  if (partial_count_ != 0)
    throw std::logic_error("BatchMeans: merge requires a batch-aligned left operand");
  total_ += later.total_;
  count_ += later.count_;
  batch_sums_.insert(batch_sums_.end(), later.batch_sums_.begin(), later.batch_sums_.end());
  partial_ = later.partial_;
  partial_count_ = later.partial_count_;
}

Eigen::VectorXd BatchMeans::mean() const {
  if (count_ == 0) throw std::logic_error("BatchMeans: empty");
  return total_ / double(count_);
}

namespace {

Eigen::VectorXd batch_error(const std::vector<Eigen::VectorXd>& sums, std::size_t lo,
                            std::size_t hi, double len, int dim) {
  const std::size_t nb = hi - lo;
  if (nb < 2) return Eigen::VectorXd::Constant(dim, std::numeric_limits<double>::infinity());
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
  for (std::size_t b = lo; b < hi; ++b) m += sums[b] / len;
  m /= double(nb);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  for (std::size_t b = lo; b < hi; ++b) v += (sums[b] / len - m).cwiseAbs2();
  v /= double(nb - 1);
  return (v / double(nb)).cwiseSqrt();
}

}  // namespace

Eigen::VectorXd BatchMeans::standard_error() const {
  return batch_error(batch_sums_, 0, batch_sums_.size(), double(batch_), dim_);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> BatchMeans::half_means() const {
  const std::size_t nb = batch_sums_.size(), h = nb / 2;
  if (h == 0) throw std::logic_error("BatchMeans: not enough batches");
  Eigen::VectorXd a = Eigen::VectorXd::Zero(dim_), b = Eigen::VectorXd::Zero(dim_);
  for (std::size_t i = 0; i < h; ++i) a += batch_sums_[i];
  for (std::size_t i = h; i < 2 * h; ++i) b += batch_sums_[i];
  return {a / double(h * batch_), b / double(h * batch_)};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> BatchMeans::half_errors() const {
  const std::size_t h = batch_sums_.size() / 2;
  return {batch_error(batch_sums_, 0, h, double(batch_), dim_),
          batch_error(batch_sums_, h, 2 * h, double(batch_), dim_)};
}

double Moments::mean_se() const { return n > 1 ? std::sqrt(variance / double(n)) : INFINITY; }

double Moments::variance_se() const {
  if (n < 4) return INFINITY;
  const double k = excess_kurtosis + 3.0;
  return variance * std::sqrt(std::max(0.0, (k - (n - 3.0) / (n - 1.0)) / double(n)));
}

double Moments::skew_z() const {
  if (n < 8) return 0.0;
  const double se = std::sqrt(6.0 * n * (n - 1.0) / ((n - 2.0) * (n + 1.0) * (n + 3.0)));
  return skewness / se;
}

double Moments::kurtosis_z() const {
  if (n < 8) return 0.0;
  return excess_kurtosis / std::sqrt(24.0 / double(n));
}

Moments moments(const Eigen::Ref<const Eigen::VectorXd>& x) {
  Moments m;
  m.n = x.size();
  if (m.n == 0) return m;
  m.mean = x.mean();
  if (m.n < 2) return m;
  const Eigen::ArrayXd d = x.array() - m.mean;
  const double m2 = d.square().mean(), m3 = d.cube().mean(), m4 = d.square().square().mean();
  m.variance = m2 * double(m.n) / double(m.n - 1);
  if (m2 > 0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples) {
  const Eigen::Index n = samples.rows();
  if (n < 2) throw std::invalid_argument("sample_covariance: need two samples");
  const Eigen::MatrixXd c = samples.rowwise() - samples.colwise().mean();
  return (c.transpose() * c) / double(n - 1);
}

double kolmogorov_tail(double x) {
  if (x <= 0) return 1.0;
  if (x < 0.2) return 1.0;
  double s = 0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
    s += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = double(a.size()), nb = double(b.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(double(i) / na - double(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  KsResult r;
  r.statistic = d;
  r.p_value = kolmogorov_tail((std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d);
  return r;
}

LinearFit linear_fit(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& y) {
  const Eigen::Index n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("linear_fit: need two matching points");
  const double mx = x.mean(), my = y.mean();
  const double sxx = (x.array() - mx).square().sum();
  if (sxx == 0) throw std::invalid_argument("linear_fit: degenerate abscissae");
  LinearFit f;
  f.slope = ((x.array() - mx) * (y.array() - my)).sum() / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    const double rss = (y.array() - f.intercept - f.slope * x.array()).square().sum();
    f.slope_se = std::sqrt(rss / double(n - 2) / sxx);
  }
  return f;
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& A, double* clipped) {
  const Eigen::MatrixXd S = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::VectorXd ev = es.eigenvalues();
  if (clipped) *clipped = std::min(0.0, ev.minCoeff());
  const Eigen::MatrixXd V = es.eigenvectors();
  Eigen::MatrixXd P = V * ev.cwiseMax(0.0).asDiagonal() * V.transpose();
  return 0.5 * (P + P.transpose());
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& A) {
  const Eigen::MatrixXd S = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::MatrixXd V = es.eigenvectors();
  Eigen::MatrixXd R = V * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * V.transpose();
  return 0.5 * (R + R.transpose());
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace parahom
