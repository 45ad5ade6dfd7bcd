#include "diffbridge/models.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <gsl/gsl_integration.h>

#include "diffbridge/errors.hpp"

namespace diffbridge {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// alpha(t), v(t) including the t = 0 endpoint.
std::pair<double, double> ou_coefficients(double t) {
  if (t < 0.0) throw DomainError("negative diffusion time");
  return {std::exp(-0.5 * t), -std::expm1(-t)};
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

double log_standard_normal(const Vector& x) {
  return -0.5 * (x.squaredNorm() + static_cast<double>(x.size()) * kLog2Pi);
}

GaussianParams::GaussianParams(Vector mean, Matrix covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  if (covariance_.rows() != mean_.size() || covariance_.cols() != mean_.size())
    throw DimensionError("covariance shape does not match mean");
  if (!covariance_.isApprox(covariance_.transpose(), 1e-12))
    throw DomainError("covariance must be symmetric");
  llt_.compute(covariance_);
  if (llt_.info() != Eigen::Success) throw DomainError("covariance is not positive definite");
  const Matrix L = llt_.matrixL();
  for (Eigen::Index i = 0; i < L.rows(); ++i)
    if (!(L(i, i) > 0.0)) throw DomainError("covariance is not positive definite");
  log_norm_ = -0.5 * static_cast<double>(mean_.size()) * kLog2Pi - L.diagonal().array().log().sum();
}

GaussianParams GaussianParams::isotropic(Vector mean, double variance) {
  const auto d = mean.size();
  return GaussianParams(std::move(mean), variance * Matrix::Identity(d, d));
}

double GaussianParams::log_density(const Vector& x) const {
  const Vector z = llt_.matrixL().solve(x - mean_);
  return log_norm_ - 0.5 * z.squaredNorm();
}

Vector GaussianParams::score(const Vector& x) const { return -llt_.solve(x - mean_); }

Vector GaussianParams::sample(Rng& rng) const {
  Vector z(mean_.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean_ + llt_.matrixL() * z;
}

GaussianParams GaussianParams::diffused(double t) const {
  const auto [alpha, v] = ou_coefficients(t);
  const auto d = mean_.size();
  return GaussianParams(alpha * mean_, alpha * alpha * covariance_ + v * Matrix::Identity(d, d));
}

Eigen::RowVectorXd TargetDensity::log_gamma_batch(const Matrix& x) const {
  Eigen::RowVectorXd out(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out(j) = log_gamma(x.col(j));
  return out;
}

Matrix TargetDensity::grad_log_gamma_batch(const Matrix& x) const {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = grad_log_gamma(x.col(j));
  return out;
}

Vector JointModel::sample_observation(Rng& rng) const {
  const Vector x = sample_prior(rng);
  return simulate_likelihood(x, rng);
}

TargetDensity make_gaussian_target(const GaussianParams& params, double scale) {
  if (!(scale > 0.0)) throw DomainError("target scale must be positive");
  const double log_scale = std::log(scale);
  TargetDensity t;
  t.name = "gaussian";
  t.dim = params.dim();
  t.log_gamma = [params, log_scale](const Vector& x) { return log_scale + params.log_density(x); };
  t.grad_log_gamma = [params](const Vector& x) { return params.score(x); };
  t.known_log_Z = log_scale;
  t.analytic_score_at_t = [params](double time, const Vector& x) { return params.diffused(time).score(x); };
  t.analytic_density_at_t = [params](double time, const Vector& x) {
    return std::exp(params.diffused(time).log_density(x));
  };
  t.exact_sampler = [params](Rng& rng) { return params.sample(rng); };
  t.mean = params.mean();
  t.covariance = params.covariance();
  t.marginal_cdf = [params](int i, double x) {
    return normal_cdf((x - params.mean()(i)) / std::sqrt(params.covariance()(i, i)));
  };
  t.weights = {1.0};
  t.components = {params};
  return t;
}

TargetDensity make_gaussian_mixture(const std::vector<double>& weights,
                                    const std::vector<GaussianParams>& components) {
  if (components.empty()) throw DomainError("mixture needs at least one component");
  if (weights.size() != components.size()) throw DimensionError("one weight per mixture component");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw DomainError("mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("mixture weights must sum to 1");
  const int d = components.front().dim();
  for (const auto& c : components)
    if (c.dim() != d) throw DimensionError("mixture components differ in dimension");

  Eigen::VectorXd log_w(static_cast<Eigen::Index>(weights.size()));
  for (std::size_t i = 0; i < weights.size(); ++i) log_w(static_cast<Eigen::Index>(i)) = std::log(weights[i]);

  auto log_density = [log_w](const std::vector<GaussianParams>& comps, const Vector& x) {
    Eigen::VectorXd terms(log_w.size());
    for (Eigen::Index i = 0; i < terms.size(); ++i)
      terms(i) = log_w(i) + comps[static_cast<std::size_t>(i)].log_density(x);
    return terms;
  };
  // Responsibility-weighted component scores.
  auto score = [log_density](const std::vector<GaussianParams>& comps, const Vector& x) {
    const Eigen::VectorXd terms = log_density(comps, x);
    const Eigen::VectorXd r = (terms.array() - log_sum_exp(terms)).exp();
    Vector s = Vector::Zero(x.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) s += r(i) * comps[static_cast<std::size_t>(i)].score(x);
    return s;
  };
  auto diffuse_all = [components](double t) {
    std::vector<GaussianParams> out;
    out.reserve(components.size());
    for (const auto& c : components) out.push_back(c.diffused(t));
    return out;
  };

  TargetDensity t;
  t.name = "mixture";
  t.dim = d;
  t.log_gamma = [components, log_density](const Vector& x) { return log_sum_exp(log_density(components, x)); };
  t.grad_log_gamma = [components, score](const Vector& x) { return score(components, x); };
  t.known_log_Z = 0.0;
  t.analytic_score_at_t = [diffuse_all, score](double time, const Vector& x) { return score(diffuse_all(time), x); };
  t.analytic_density_at_t = [diffuse_all, log_density](double time, const Vector& x) {
    return std::exp(log_sum_exp(log_density(diffuse_all(time), x)));
  };
  t.exact_sampler = [weights, components](Rng& rng) {
    double u = rng.uniform();
    std::size_t i = 0;
    while (i + 1 < weights.size() && u >= weights[i]) u -= weights[i++];
    return components[i].sample(rng);
  };
  Vector mean = Vector::Zero(d);
  for (std::size_t i = 0; i < weights.size(); ++i) mean += weights[i] * components[i].mean();
  Matrix cov = Matrix::Zero(d, d);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Vector dm = components[i].mean() - mean;
    cov += weights[i] * (components[i].covariance() + dm * dm.transpose());
  }
  t.mean = mean;
  t.covariance = cov;
  t.marginal_cdf = [weights, components](int k, double x) {
    double c = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
      c += weights[i] * normal_cdf((x - components[i].mean()(k)) / std::sqrt(components[i].covariance()(k, k)));
    return c;
  };
  t.weights = weights;
  t.components = components;
  return t;
}

TargetDensity make_ring_mixture(int modes, double radius, double variance) {
  if (modes < 1) throw DomainError("ring mixture needs at least one mode");
  std::vector<double> w(static_cast<std::size_t>(modes), 1.0 / modes);
  std::vector<GaussianParams> comps;
  for (int i = 0; i < modes; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / modes;
    Vector m(2);
    m << radius * std::cos(angle), radius * std::sin(angle);
    comps.push_back(GaussianParams::isotropic(m, variance));
  }
  auto t = make_gaussian_mixture(w, comps);
  t.name = "ring";
  return t;
}

TargetDensity make_funnel(double top_std) {
  if (!(top_std > 0.0)) throw DomainError("funnel scale must be positive");
  const double s2 = top_std * top_std;
  TargetDensity t;
  t.name = "funnel";
  t.dim = 2;
  t.log_gamma = [s2](const Vector& x) {
    return -0.5 * x(0) * x(0) / s2 - 0.5 * std::log(2.0 * std::numbers::pi * s2) - 0.5 * x(1) * x(1) * std::exp(-x(0)) -
           0.5 * (kLog2Pi + x(0));
  };
  t.grad_log_gamma = [s2](const Vector& x) {
    Vector g(2);
    const double e = std::exp(-x(0));
    g << -x(0) / s2 - 0.5 + 0.5 * x(1) * x(1) * e, -x(1) * e;
    return g;
  };
  t.known_log_Z = 0.0;
  t.exact_sampler = [top_std](Rng& rng) {
    Vector x(2);
    x(0) = top_std * rng.normal();
    x(1) = std::exp(0.5 * x(0)) * rng.normal();
    return x;
  };
  t.mean = Vector::Zero(2);
  Matrix cov = Matrix::Zero(2, 2);
  cov(0, 0) = s2;
  cov(1, 1) = std::exp(0.5 * s2);
  t.covariance = cov;
  t.marginal_cdf = [top_std](int i, double x) -> double {
    if (i == 0) return normal_cdf(x / top_std);
    // x1 is a scale mixture; integrate the conditional CDF over x0.
    const auto rule = gauss_legendre(200, -10.0 * top_std, 10.0 * top_std);
    double c = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
      const double x0 = rule.nodes[k];
      const double dens = std::exp(-0.5 * x0 * x0 / (top_std * top_std)) / (top_std * std::sqrt(2.0 * std::numbers::pi));
      c += rule.weights[k] * dens * normal_cdf(x * std::exp(-0.5 * x0));
    }
    return c;
  };
  return t;
}

JointModel make_conjugate_linear_gaussian(double prior_var, double obs_var, int dim) {
  if (!(prior_var > 0.0) || !(obs_var > 0.0)) throw DomainError("variances must be positive");
  if (dim < 1) throw DomainError("dimension must be positive");
  const double s0 = prior_var, s = obs_var;
  JointModel m;
  m.name = "conjugate";
  m.latent_dim = dim;
  m.obs_dim = dim;
  m.sample_prior = [s0, dim](Rng& rng) {
    Vector x(dim);
    for (int i = 0; i < dim; ++i) x(i) = std::sqrt(s0) * rng.normal();
    return x;
  };
  m.simulate_likelihood = [s](const Vector& x, Rng& rng) {
    Vector y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) y(i) = x(i) + std::sqrt(s) * rng.normal();
    return y;
  };
  m.log_likelihood = [s](const Vector& x, const Vector& y) {
    return -0.5 * (y - x).squaredNorm() / s - 0.5 * static_cast<double>(x.size()) * (kLog2Pi + std::log(s));
  };
  m.analytic_posterior = [s0, s](const Vector& y) {
    return GaussianParams::isotropic(s0 * y / (s0 + s), s0 * s / (s0 + s));
  };
  m.analytic_conditional_score = [s0, s](double t, const Vector& x, const Vector& y) -> Vector {
    const auto [alpha, v] = ou_coefficients(t);
    const Vector mean = alpha * s0 * y / (s0 + s);
    const double var = alpha * alpha * s0 * s / (s0 + s) + v;
    return -(x - mean) / var;
  };
  m.analytic_prior_score = [s0](double t, const Vector& x) -> Vector {
    const auto [alpha, v] = ou_coefficients(t);
    return -x / (alpha * alpha * s0 + v);
  };
  // y | x_t ~ N(c x_t, r + s) with c, r the regression of x_0 on x_t.
  m.exact_guidance = [s0, s](double t, const Vector& x, const Vector& y) -> Vector {
    const auto [alpha, v] = ou_coefficients(t);
    const double var_t = alpha * alpha * s0 + v;
    const double c = alpha * s0 / var_t;
    const double r = s0 - alpha * alpha * s0 * s0 / var_t;
    return c * (y - c * x) / (r + s);
  };
  return m;
}

JointModel make_uninformative_model(int dim, int obs_dim) {
  if (dim < 1 || obs_dim < 1) throw DomainError("dimensions must be positive");
  JointModel m;
  m.name = "uninformative";
  m.latent_dim = dim;
  m.obs_dim = obs_dim;
  m.sample_prior = [dim](Rng& rng) {
    Vector x(dim);
    for (int i = 0; i < dim; ++i) x(i) = rng.normal();
    return x;
  };
  m.simulate_likelihood = [obs_dim](const Vector&, Rng& rng) {
    Vector y(obs_dim);
    for (int i = 0; i < obs_dim; ++i) y(i) = rng.normal();
    return y;
  };
  m.log_likelihood = [](const Vector&, const Vector& y) { return log_standard_normal(y); };
  m.analytic_posterior = [dim](const Vector&) { return GaussianParams::isotropic(Vector::Zero(dim), 1.0); };
  m.analytic_conditional_score = [](double, const Vector& x, const Vector&) -> Vector { return -x; };
  m.analytic_prior_score = [](double, const Vector& x) -> Vector { return -x; };
  m.exact_guidance = [](double, const Vector& x, const Vector&) -> Vector { return Vector::Zero(x.size()); };
  return m;
}

QuadratureRule gauss_legendre(int n, double lo, double hi) {
  gsl_integration_glfixed_table* table = gsl_integration_glfixed_table_alloc(static_cast<std::size_t>(n));
  if (table == nullptr) throw DomainError("could not build Gauss-Legendre rule");
  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    gsl_integration_glfixed_point(lo, hi, static_cast<std::size_t>(i), &rule.nodes[static_cast<std::size_t>(i)],
                                  &rule.weights[static_cast<std::size_t>(i)], table);
  gsl_integration_glfixed_table_free(table);
  return rule;
}

double quadrature_diffused_density(const TargetDensity& target, double t, const Vector& x, int nodes,
                                   double half_width) {
  if (target.dim > 2) throw UnsupportedError("quadrature supports d <= 2, got d = " + std::to_string(target.dim));
  if (x.size() != target.dim) throw DimensionError("evaluation point dimension mismatch");
  const auto m = ou_moments(t);
  const auto rule = gauss_legendre(nodes, -half_width, half_width);
  const double log_kernel_norm = -0.5 * target.dim * (kLog2Pi + std::log(m.variance));
  double mass = 0.0, integral = 0.0;
  auto accumulate = [&](const Vector& x0, double w) {
    const double g = std::exp(target.log_gamma(x0));
    mass += w * g;
    integral += w * g * std::exp(log_kernel_norm - 0.5 * (x - m.alpha * x0).squaredNorm() / m.variance);
  };
  Vector x0(target.dim);
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    x0(0) = rule.nodes[i];
    if (target.dim == 1) {
      accumulate(x0, rule.weights[i]);
      continue;
    }
    for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
      x0(1) = rule.nodes[j];
      accumulate(x0, rule.weights[i] * rule.weights[j]);
    }
  }
  return integral / mass;
}

}  // namespace diffbridge
