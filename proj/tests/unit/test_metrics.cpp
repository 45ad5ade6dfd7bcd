#include <doctest.h>

#include <cmath>

#include "diffbridge/errors.hpp"
#include "diffbridge/metrics.hpp"
#include "diffbridge/rng.hpp"

using namespace diffbridge;

TEST_CASE("ks statistic of a single point against the uniform cdf") {
  const auto cdf = [](double x) { return std::clamp(x, 0.0, 1.0); };
  CHECK(ks_statistic(std::vector<double>{0.5}, cdf) == doctest::Approx(0.5));
  CHECK(ks_statistic(std::vector<double>{0.25, 0.75}, cdf) == doctest::Approx(0.25));
}

TEST_CASE("exact normal draws stay under the 99% KS null quantile") {
  Rng rng(2024);
  const Matrix x = rng.normal_matrix(2, 10000);
  CHECK(ks_null_quantile_99(10000) == doctest::Approx(0.01628));
  CHECK(ks_standard_normal(x) < ks_null_quantile_99(10000));
}

TEST_CASE("constant weights give ESS = n") {
  CHECK(effective_sample_size(Eigen::RowVectorXd::Constant(137, -3.2)) == 137.0);
  const Eigen::RowVectorXd lw = (Eigen::RowVectorXd(2) << 0.0, -1000.0).finished();
  CHECK(effective_sample_size(lw) == doctest::Approx(1.0));
}

TEST_CASE("moment errors against a reference") {
  const Matrix s = (Matrix(1, 4) << 0.0, 1.0, 2.0, 3.0).finished();
  const MomentErrors e = moment_errors(s, Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 1.0));
  CHECK(e.mean(0) == doctest::Approx(1.5));
  CHECK(e.mean_error == doctest::Approx(0.5));
  CHECK(e.covariance(0, 0) == doctest::Approx(5.0 / 3.0));
  CHECK(e.covariance_error == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("eval metrics is deterministic and validates its input") {
  Rng rng(5);
  const Matrix x = rng.normal_matrix(2, 500);
  ReferenceDescription ref;
  ref.mean = Vector::Zero(2);
  ref.covariance = Matrix::Identity(2, 2);
  ref.marginal_cdf = [](int, double v) { return standard_normal_cdf(v); };
  const MetricsRecord a = eval_metrics(x, ref, Eigen::RowVectorXd::Zero(500));
  const MetricsRecord b = eval_metrics(x, ref, Eigen::RowVectorXd::Zero(500));
  CHECK(a.to_json() == b.to_json());
  CHECK(a.scalars.at("ess") == 500.0);
  CHECK(a.series.at("ks").size() == 2u);
  CHECK(a.schema_version == kMetricsSchemaVersion);
  CHECK_THROWS(eval_metrics(Matrix(2, 0), ref));
}

TEST_CASE("metrics record rejects non-finite values") {
  MetricsRecord m;
  m.scalars["x"] = NAN;
  CHECK_THROWS(m.validate());
  MetricsRecord ok;
  ok.series["t"] = {1.0, 2.0};
  CHECK_NOTHROW(ok.validate());
  CHECK(ok.to_json().find("\"schema_version\": 1") != std::string::npos);
}

TEST_CASE("mode fractions assign each sample to its nearest center") {
  const Matrix centers = (Matrix(2, 2) << -2.0, 2.0, 0.0, 0.0).finished();
  const Matrix s = (Matrix(2, 4) << -1.0, -3.0, 0.5, 2.0, 0.0, 1.0, 0.0, -1.0).finished();
  const std::vector<double> f = mode_fractions(s, centers);
  CHECK(f[0] == doctest::Approx(0.5));
  CHECK(f[1] == doctest::Approx(0.5));
}

TEST_CASE("standard normal cdf") {
  CHECK(standard_normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(standard_normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
}
