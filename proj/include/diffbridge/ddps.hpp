#pragma once

#include <functional>
#include <vector>

#include "diffbridge/models.hpp"
#include "diffbridge/network.hpp"
#include "diffbridge/sde.hpp"
#include "diffbridge/training.hpp"

namespace diffbridge {

struct DdpsConfig {
  TimeGrid grid = TimeGrid::uniform(5.0, 64);
  TrainingConfig training{};
  /// t_min = t_min_fraction * T guards the 1 / v(t) blow-up of the regression target.
  double t_min_fraction = 1e-3;

  double t_min() const { return t_min_fraction * grid.horizon(); }
};

/// Minibatch for denoising score matching; columns are samples.
struct DsmBatch {
  Eigen::RowVectorXd times;
  Matrix x0;
  Matrix y;
  Matrix xt;
};

/// Draws (x0, y) ~ p(x, y), t uniform on [t_min, T] by rejection, x_t ~ p_{t|0}(. | x0).
DsmBatch draw_dsm_batch(const JointModel& model, int batch_size, double horizon, double t_min, Rng& rng);

/// T * mean_i || s(t_i, x_t,i, y_i) - grad log p_{t|0}(x_t,i | x0,i) ||^2; accumulates
/// the parameter gradient into `grad` when given.
double dsm_loss(const Mlp& score, const DsmBatch& batch, double horizon, double t_min, Eigen::VectorXd* grad = nullptr);

struct TrainedPosteriorSampler {
  Mlp score;
  DdpsConfig config;
  std::vector<double> loss_trace;

  Vector evaluate(double t, const Vector& x, const Vector& y) const { return score.evaluate(t, x, y); }
};

TrainedPosteriorSampler train_ddps(const JointModel& model, const DdpsConfig& config, Rng& rng);

/// Unconditional prior-score network trained by DSM on prior draws (y is ignored).
TrainedPosteriorSampler train_prior_score(const JointModel& model, const DdpsConfig& config, Rng& rng);

/// Euler simulation of dZ = (Z/2 + s(T - t, Z, y)) dt + dW from N(0, I); all visited states.
PathBatch sample_posterior_paths(const TrainedPosteriorSampler& sampler, const Vector& y, int n, Rng& rng);
/// Terminal states of sample_posterior_paths, d x n.
Matrix sample_posterior(const TrainedPosteriorSampler& sampler, const Vector& y, int n, Rng& rng);

using ScoreFunction = std::function<Vector(double t, const Vector& x)>;

enum class GuidanceMode {
  /// grad_x log g(y | x0_hat(t, x)) through the posterior-mean denoiser.
  denoiser,
  /// Closed-form grad log g_t from the model.
  exact,
};

/// Conditional score s(t, x) + grad log g_t(y | x) assembled from an unconditional score.
Vector guided_score(const ScoreFunction& unconditional, const JointModel& model, double t, const Vector& x,
                    const Vector& y, GuidanceMode mode = GuidanceMode::denoiser);

}  // namespace diffbridge
