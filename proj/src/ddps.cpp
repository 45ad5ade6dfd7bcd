#include "diffbridge/ddps.hpp"

#include <cmath>

#include "diffbridge/errors.hpp"

namespace diffbridge {

DsmBatch draw_dsm_batch(const JointModel& model, int batch_size, double horizon, double t_min, Rng& rng) {
  if (batch_size < 1) throw DomainError("batch size must be at least 1");
  if (!(t_min > 0.0) || !(t_min < horizon)) throw DomainError("t_min must lie in (0, T)");
  DsmBatch b{Eigen::RowVectorXd(batch_size), Matrix(model.latent_dim, batch_size), Matrix(model.obs_dim, batch_size),
             Matrix(model.latent_dim, batch_size)};
  for (int i = 0; i < batch_size; ++i) {
    b.x0.col(i) = model.sample_prior(rng);
    b.y.col(i) = model.simulate_likelihood(b.x0.col(i), rng);
    double t = rng.uniform(0.0, horizon);
    while (t < t_min) t = rng.uniform(0.0, horizon);
    b.times(i) = t;
    const auto m = ou_moments(t);
    for (int k = 0; k < model.latent_dim; ++k)
      b.xt(k, i) = m.alpha * b.x0(k, i) + std::sqrt(m.variance) * rng.normal();
  }
  return b;
}

double dsm_loss(const Mlp& score, const DsmBatch& batch, double horizon, double t_min, Eigen::VectorXd* grad) {
  const auto n = batch.xt.cols();
  Matrix target(batch.xt.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (batch.times(i) < t_min) throw DomainError("DSM sample below t_min must be resampled");
    target.col(i) = ou_transition_score(batch.x0.col(i), batch.xt.col(i), batch.times(i));
  }
  const double w = horizon / static_cast<double>(n);
  if (grad == nullptr) return w * (score.evaluate(batch.times, batch.xt, batch.y) - target).squaredNorm();

  ad::Tape tape;
  ad::Var out = score.record(tape, batch.times, tape.constant(batch.xt), batch.y, grad->data());
  ad::Var loss = ad::scale(ad::sum_squares(ad::sub(out, tape.constant(target))), w);
  tape.backward(loss);
  return loss.value()(0, 0);
}

namespace {

TrainedPosteriorSampler train_score(const JointModel& model, const DdpsConfig& config, Rng& rng, bool conditional) {
  const auto& tc = config.training;
  const double T = config.grid.horizon();
  const double t_min = config.t_min();
  TrainedPosteriorSampler s{Mlp(make_architecture(tc, model.latent_dim, conditional ? model.obs_dim : 0, T), rng),
                            config, {}};
  AdamState adam(tc.adam, s.score.num_params());
  Eigen::VectorXd grad(s.score.num_params());
  s.loss_trace.reserve(static_cast<std::size_t>(tc.iterations));
  for (int it = 0; it < tc.iterations; ++it) {
    DsmBatch batch = draw_dsm_batch(model, tc.batch_size, T, t_min, rng);
    if (!conditional) batch.y.resize(0, batch.y.cols());
    grad.setZero();
    const double loss = dsm_loss(s.score, batch, T, t_min, &grad);
    if (!std::isfinite(loss)) throw TrainingError("DSM loss is non-finite at iteration " + std::to_string(it));
    apply_update(adam, s.score, grad, tc, it, "DSM training");
    s.loss_trace.push_back(loss);
  }
  return s;
}

}  // namespace

TrainedPosteriorSampler train_ddps(const JointModel& model, const DdpsConfig& config, Rng& rng) {
  return train_score(model, config, rng, true);
}

TrainedPosteriorSampler train_prior_score(const JointModel& model, const DdpsConfig& config, Rng& rng) {
  return train_score(model, config, rng, false);
}

PathBatch sample_posterior_paths(const TrainedPosteriorSampler& sampler, const Vector& y, int n, Rng& rng) {
  const int d = sampler.score.architecture().state_dim;
  const Matrix ycol = y;
  const BatchField drift = [&](double t, const Matrix& z) -> Matrix {
    return 0.5 * z + sampler.score.evaluate(t, z, ycol);
  };
  Matrix z0 = rng.normal_matrix(d, n);
  return simulate(drift, sampler.config.grid, z0, rng, Direction::backward, Scheme::euler);
}

Matrix sample_posterior(const TrainedPosteriorSampler& sampler, const Vector& y, int n, Rng& rng) {
  return sample_posterior_paths(sampler, y, n, rng).terminal();
}

Vector guided_score(const ScoreFunction& unconditional, const JointModel& model, double t, const Vector& x,
                    const Vector& y, GuidanceMode mode) {
  const Vector s = unconditional(t, x);
  if (mode == GuidanceMode::exact) {
    if (!model.exact_guidance) throw UnsupportedError("model '" + model.name + "' has no closed-form guidance");
    return s + model.exact_guidance(t, x, y);
  }
  if (!model.log_likelihood) throw UnsupportedError("model '" + model.name + "' does not expose log_likelihood");
  const auto m = ou_moments(t);
  auto guidance_potential = [&](const Vector& z) {
    const Vector x0_hat = (z + m.variance * unconditional(t, z)) / m.alpha;
    return model.log_likelihood(x0_hat, y);
  };
  Vector g(x.size());
  const double h = 1e-5 * (1.0 + x.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector up = x, down = x;
    up(i) += h;
    down(i) -= h;
    g(i) = (guidance_potential(up) - guidance_potential(down)) / (2.0 * h);
  }
  return s + g;
}

}  // namespace diffbridge
