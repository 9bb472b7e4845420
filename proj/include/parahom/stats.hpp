#ifndef PARAHOM_STATS_HPP
#define PARAHOM_STATS_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace parahom {

/// Cross-covariances C_k = 1/(T-k) sum_t x_t x_{t+k}^T for k = 0..max_lag of a
/// (T x p) series, via zero-padded FFT. Set `demean` to subtract the column
/// means first. Entry k is a (p x p) matrix with C_k(a, b) = <x^a_t x^b_{t+k}>.
std::vector<Eigen::MatrixXd> autocovariance(const Eigen::MatrixXd& series, Eigen::Index max_lag,
                                            bool demean);

/// Running batch-means accumulator for a p-dimensional series.
class BatchMeans {
 public:
  BatchMeans() = default;
  BatchMeans(int dimension, std::int64_t batch_length);

  void push(const Eigen::Ref<const Eigen::VectorXd>& x);
  /// Appends the batches of `later` (a continuation of this series).
  void merge(const BatchMeans& later);

  int dimension() const { return dim_; }
  std::int64_t count() const { return count_; }
  std::int64_t batch_length() const { return batch_; }
  Eigen::Index batches() const { return static_cast<Eigen::Index>(batch_sums_.size()); }

  Eigen::VectorXd mean() const;
  /// Standard error of the mean from the spread of complete batch means.
  Eigen::VectorXd standard_error() const;
  /// Means of the first and second halves (by complete batches).
  std::pair<Eigen::VectorXd, Eigen::VectorXd> half_means() const;
  std::pair<Eigen::VectorXd, Eigen::VectorXd> half_errors() const;

 private:
  Eigen::VectorXd batch_mean(std::size_t b) const { return batch_sums_[b] / double(batch_); }

  int dim_ = 0;
  std::int64_t batch_ = 1;
  std::int64_t count_ = 0;
  std::int64_t partial_count_ = 0;
  Eigen::VectorXd total_, partial_;
  std::vector<Eigen::VectorXd> batch_sums_;
};

struct Moments {
  std::int64_t n = 0;
  double mean = 0, variance = 0, skewness = 0, excess_kurtosis = 0;
  double mean_se() const;
  /// Standard error of the sample variance (uses the fourth moment).
  double variance_se() const;
  /// Large-sample z-scores of skewness and excess kurtosis under normality.
  double skew_z() const;
  double kurtosis_z() const;
};

Moments moments(const Eigen::Ref<const Eigen::VectorXd>& x);

/// Unbiased sample covariance of the columns of a (samples x p) matrix.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples);

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
struct KsResult {
  double statistic = 0;
  double p_value = 1;
};
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);
/// Kolmogorov distribution tail P(K > x).
double kolmogorov_tail(double x);

/// Least squares y = intercept + slope x with the slope's standard error.
struct LinearFit {
  double slope = 0, intercept = 0, slope_se = 0;
};
LinearFit linear_fit(const Eigen::Ref<const Eigen::VectorXd>& x,
                     const Eigen::Ref<const Eigen::VectorXd>& y);

/// Symmetric PSD projection (negative eigenvalues set to zero); returns the
/// most negative eigenvalue removed through `clipped`.
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& A, double* clipped = nullptr);
/// Symmetric square root with eigenvalue floor 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& A);

/// Standard normal CDF.
double normal_cdf(double x);

}  // namespace parahom

#endif  // PARAHOM_STATS_HPP
