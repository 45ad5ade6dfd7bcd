#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "diffbridge/rng.hpp"
#include "diffbridge/sde.hpp"

namespace diffbridge {

/// N(mean, covariance) with a cached Cholesky factor.
class GaussianParams {
 public:
  GaussianParams(Vector mean, Matrix covariance);
  static GaussianParams isotropic(Vector mean, double variance);

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }

  double log_density(const Vector& x) const;
  /// grad_x log N(x; mean, covariance)
  Vector score(const Vector& x) const;
  Vector sample(Rng& rng) const;
  /// Law of alpha X + sqrt(v) eps for X ~ this.
  GaussianParams diffused(double t) const;

 private:
  Vector mean_;
  Matrix covariance_;
  Eigen::LLT<Matrix> llt_;
  double log_norm_ = 0.0;
};

/// Unnormalized target gamma with gradient and whatever ground truth exists.
struct TargetDensity {
  std::string name;
  int dim = 0;
  std::function<double(const Vector&)> log_gamma;
  std::function<Vector(const Vector&)> grad_log_gamma;
  std::optional<double> known_log_Z;
  /// grad log p_t(x) under the OU noising process started at p = gamma / Z.
  std::function<Vector(double t, const Vector& x)> analytic_score_at_t;
  /// p_t(x), normalized.
  std::function<double(double t, const Vector& x)> analytic_density_at_t;
  std::function<Vector(Rng&)> exact_sampler;
  std::optional<Vector> mean;
  std::optional<Matrix> covariance;
  /// CDF of coordinate i of p.
  std::function<double(int i, double x)> marginal_cdf;
  /// Mixture bookkeeping, empty for non-mixtures.
  std::vector<double> weights;
  std::vector<GaussianParams> components;

  Eigen::RowVectorXd log_gamma_batch(const Matrix& x) const;
  Matrix grad_log_gamma_batch(const Matrix& x) const;
};

/// Bayesian joint model p(x, y) = mu(x) g(y | x).
struct JointModel {
  std::string name;
  int latent_dim = 0;
  int obs_dim = 0;
  std::function<Vector(Rng&)> sample_prior;
  std::function<Vector(const Vector& x, Rng&)> simulate_likelihood;
  std::function<double(const Vector& x, const Vector& y)> log_likelihood;
  std::function<GaussianParams(const Vector& y)> analytic_posterior;
  std::function<Vector(double t, const Vector& x, const Vector& y)> analytic_conditional_score;
  /// grad log mu_t(x), the diffused prior score.
  std::function<Vector(double t, const Vector& x)> analytic_prior_score;
  /// grad_x log g_t(y | x), the diffused likelihood score.
  std::function<Vector(double t, const Vector& x, const Vector& y)> exact_guidance;

  /// Draws y ~ p(y) by simulating a prior draw and discarding it.
  Vector sample_observation(Rng& rng) const;
};

TargetDensity make_gaussian_target(const GaussianParams& params, double scale = 1.0);
TargetDensity make_gaussian_mixture(const std::vector<double>& weights,
                                    const std::vector<GaussianParams>& components);
/// m isotropic modes equally spaced on a circle of the given radius in 2-d (m = 2: (+-r, 0)).
TargetDensity make_ring_mixture(int modes, double radius, double variance);
/// 2-d funnel: x0 ~ N(0, s^2), x1 | x0 ~ N(0, exp(x0)).
TargetDensity make_funnel(double top_std);

JointModel make_conjugate_linear_gaussian(double prior_var, double obs_var, int dim);
/// Prior N(0, I_d) with observations independent of x; posterior equals prior.
JointModel make_uninformative_model(int dim, int obs_dim);

/// p_t(x) = int N(x; alpha x0, v I) p(x0) dx0 by tensor Gauss-Legendre on [-12, 12]^d, d <= 2.
double quadrature_diffused_density(const TargetDensity& target, double t, const Vector& x,
                                   int nodes = 400, double half_width = 12.0);

/// Gauss-Legendre nodes and weights on [lo, hi].
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
QuadratureRule gauss_legendre(int n, double lo, double hi);

double log_standard_normal(const Vector& x);

}  // namespace diffbridge
