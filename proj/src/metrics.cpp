#include "diffbridge/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "diffbridge/errors.hpp"

namespace diffbridge {

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw DomainError("KS statistic of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_statistic(const Eigen::RowVectorXd& samples, const std::function<double(double)>& cdf) {
  return ks_statistic(std::vector<double>(samples.data(), samples.data() + samples.size()), cdf);
}

double ks_standard_normal(const Matrix& samples) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    worst = std::max(worst, ks_statistic(Eigen::RowVectorXd(samples.row(i)), standard_normal_cdf));
  return worst;
}

double ks_null_quantile_99(int n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

Vector sample_mean(const Matrix& samples) {
  if (samples.cols() == 0) throw DomainError("empty sample");
  return samples.rowwise().mean();
}

Matrix sample_covariance(const Matrix& samples) {
  if (samples.cols() < 2) throw DomainError("covariance needs at least two samples");
  const Matrix c = samples.colwise() - sample_mean(samples);
  return c * c.transpose() / static_cast<double>(samples.cols() - 1);
}

MomentErrors moment_errors(const Matrix& samples, const Vector& ref_mean, const Matrix& ref_cov) {
  if (ref_mean.size() != samples.rows() || ref_cov.rows() != samples.rows() || ref_cov.cols() != samples.rows())
    throw DimensionError("reference moments do not match the sample dimension");
  MomentErrors e;
  e.mean = sample_mean(samples);
  e.covariance = sample_covariance(samples);
  e.mean_error = (e.mean - ref_mean).cwiseAbs().maxCoeff();
  e.covariance_error = (e.covariance - ref_cov).cwiseAbs().maxCoeff();
  return e;
}

double effective_sample_size(const Eigen::RowVectorXd& log_weights) {
  if (log_weights.size() == 0) throw DomainError("ESS of an empty weight vector");
  const double mx = log_weights.maxCoeff();
  if (!std::isfinite(mx)) throw DomainError("ESS needs at least one finite log-weight");
  const Eigen::ArrayXd w = (log_weights.array() - mx).exp();
  const double s = w.sum();
  return s * s / w.square().sum();
}

std::vector<double> mode_fractions(const Matrix& samples, const Matrix& centers) {
  if (samples.cols() == 0) throw DomainError("mode fractions of an empty sample");
  if (centers.rows() != samples.rows()) throw DimensionError("centers do not match the sample dimension");
  std::vector<double> counts(static_cast<std::size_t>(centers.cols()), 0.0);
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    Eigen::Index best = 0;
    (centers.colwise() - samples.col(j)).colwise().squaredNorm().minCoeff(&best);
    counts[static_cast<std::size_t>(best)] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(samples.cols());
  return counts;
}

void MetricsRecord::validate() const {
  for (const auto& [k, v] : scalars)
    if (!std::isfinite(v)) throw DomainError("metric '" + k + "' is not finite");
  for (const auto& [k, s] : series)
    for (double v : s)
      if (!std::isfinite(v)) throw DomainError("metric series '" + k + "' has a non-finite entry");
}

std::string MetricsRecord::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["schema_version"] = schema_version;
  j["labels"] = labels;
  j["scalars"] = scalars;
  j["series"] = series;
  return j.dump(indent);
}

MetricsRecord eval_metrics(const Matrix& samples, const ReferenceDescription& reference,
                           const std::optional<Eigen::RowVectorXd>& log_weights) {
  if (samples.cols() == 0 || samples.rows() == 0) throw DomainError("eval_metrics: samples are empty");
  MetricsRecord r;
  const int d = static_cast<int>(samples.rows());
  r.scalars["num_samples"] = static_cast<double>(samples.cols());
  r.scalars["dim"] = d;

  const Vector mean = sample_mean(samples);
  r.series["sample_mean"] = std::vector<double>(mean.data(), mean.data() + d);
  if (samples.cols() > 1) {
    const Vector var = sample_covariance(samples).diagonal();
    r.series["sample_variance"] = std::vector<double>(var.data(), var.data() + d);
  }
  if (reference.mean) r.scalars["mean_error"] = (mean - *reference.mean).cwiseAbs().maxCoeff();
  if (reference.covariance && samples.cols() > 1)
    r.scalars["covariance_error"] = (sample_covariance(samples) - *reference.covariance).cwiseAbs().maxCoeff();
  if (reference.marginal_cdf) {
    std::vector<double> ks(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i)
      ks[static_cast<std::size_t>(i)] = ks_statistic(Eigen::RowVectorXd(samples.row(i)),
                                                     [&](double x) { return reference.marginal_cdf(i, x); });
    r.series["ks"] = ks;
    r.scalars["ks_max"] = *std::max_element(ks.begin(), ks.end());
  }
  if (log_weights) {
    if (log_weights->size() != samples.cols()) throw DimensionError("one log-weight per sample is required");
    r.scalars["ess"] = effective_sample_size(*log_weights);
  }
  return r;
}

}  // namespace diffbridge
