#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace diffbridge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr int kMetricsSchemaVersion = 1;

double standard_normal_cdf(double x);

/// sup_x |F_n(x) - F(x)| for the empirical CDF of `samples`.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);
double ks_statistic(const Eigen::RowVectorXd& samples, const std::function<double(double)>& cdf);
/// Largest per-dimension KS distance of the columns of `samples` against N(0, 1).
double ks_standard_normal(const Matrix& samples);
/// Asymptotic 99% quantile of the KS null distribution, 1.628 / sqrt(n).
double ks_null_quantile_99(int n);

struct MomentErrors {
  double mean_error;        ///< max_i |mean_i - ref_i|
  double covariance_error;  ///< max_ij |cov_ij - ref_ij|
  Vector mean;
  Matrix covariance;
};

MomentErrors moment_errors(const Matrix& samples, const Vector& ref_mean, const Matrix& ref_cov);
Vector sample_mean(const Matrix& samples);
/// Unbiased sample covariance.
Matrix sample_covariance(const Matrix& samples);

/// (sum w)^2 / sum w^2 for w = exp(log_w), computed after max-shifting.
double effective_sample_size(const Eigen::RowVectorXd& log_weights);

/// Fraction of samples whose nearest center (Euclidean) is each column of `centers`.
std::vector<double> mode_fractions(const Matrix& samples, const Matrix& centers);

/// Scalars, per-dimension vectors and traces of one run.
struct MetricsRecord {
  int schema_version = kMetricsSchemaVersion;
  std::map<std::string, double> scalars;
  std::map<std::string, std::vector<double>> series;
  std::map<std::string, std::string> labels;

  /// Throws DomainError if any stored value is non-finite.
  void validate() const;
  std::string to_json(int indent = 2) const;
};

/// Known facts about the law samples should follow; every field is optional.
struct ReferenceDescription {
  std::optional<Vector> mean;
  std::optional<Matrix> covariance;
  /// cdf(i, x) of coordinate i.
  std::function<double(int, double)> marginal_cdf;
};

/// Moment errors, per-dimension KS and ESS (when weights are given).
MetricsRecord eval_metrics(const Matrix& samples, const ReferenceDescription& reference,
                           const std::optional<Eigen::RowVectorXd>& log_weights = std::nullopt);

}  // namespace diffbridge
