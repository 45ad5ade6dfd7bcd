#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "diffbridge/models.hpp"
#include "diffbridge/network.hpp"
#include "diffbridge/sde.hpp"
#include "diffbridge/training.hpp"

namespace diffbridge {

struct DdgsConfig {
  TimeGrid grid = TimeGrid::uniform(5.0, 64);
  TrainingConfig training{1500, 128};
};

/// Sum of frozen drift-correction networks on top of the reference drift -x/2.
struct CorrectionSum {
  std::vector<Mlp> networks;

  bool empty() const { return networks.empty(); }
  Matrix evaluate(double t, const Matrix& x) const;
  /// Records the frozen sum (no parameter gradients); returns nullopt when empty.
  std::optional<ad::Var> record(ad::Tape& tape, const Eigen::RowVectorXd& times, ad::Var x) const;
};

/// log Phi at the terminal state of a backward path, with its gradient.
struct TerminalPotential {
  std::function<void(const Matrix& z, Eigen::RowVectorXd& value, Matrix& grad)> evaluate;
  /// Values may come back NaN when only the gradient was computed; the loss is then
  /// reported as NaN while its parameter gradient stays exact.
  bool values_optional = false;
};

/// log Phi = log gamma - log N(0, I).
TerminalPotential reference_potential(const TargetDensity& target);

/// Frozen randomness of a batch of backward rollouts: Z_0 and the standard-normal increments.
struct NoiseRecord {
  Matrix z0;
  std::vector<Matrix> increments;
};

/// Draws Z_0 first, then one d x n block per step.
NoiseRecord draw_noise(int dim, int n, int steps, Rng& rng);

/// Backward rollout z_{j+1} = alpha(h) z_j + h (c(t, z_j) + u(t, z_j)) + sqrt(v(h)) xi_j
/// with t = t_{K-j}, h = gamma_{K-j}.
PathBatch rollout(const Mlp* u, const CorrectionSum& base, const TimeGrid& grid, const NoiseRecord& noise);

/// Weight of ||u||^2 in the discrete path KL for step size h: h^2 / (2 v(h)).
double energy_weight(double h);

struct ControlledLoss {
  double loss;
  Eigen::RowVectorXd per_path;
};

/// Pathwise reverse-KL objective mean_i [ sum_j w_j ||u(t_j, z_j)||^2 - log Phi(z_K) ],
/// differentiated through the unrolled rollout (increments are tape constants).
ControlledLoss controlled_kl_loss(const Mlp& u, const CorrectionSum& base, const TerminalPotential& potential,
                                  const TimeGrid& grid, const NoiseRecord& noise, Eigen::VectorXd* grad = nullptr);

/// Reverse-KL loss of the denoising general sampler; its minimum over u is -log Z.
ControlledLoss reverse_kl_loss(const Mlp& u, const TargetDensity& target, const TimeGrid& grid,
                               const NoiseRecord& noise, Eigen::VectorXd* grad = nullptr);

struct HTransformSampler {
  Mlp correction;
  TargetDensity target;
  DdgsConfig config;
  std::vector<double> loss_trace;
};

/// Adam on controlled_kl_loss from a fresh (or given) network; trace holds per-iteration losses.
Mlp train_controlled(const CorrectionSum& base, const TerminalPotential& potential, int dim, const TimeGrid& grid,
                     const TrainingConfig& training, Rng& rng, std::vector<double>& loss_trace,
                     std::optional<Mlp> initial = std::nullopt);

HTransformSampler train_ddgs(const TargetDensity& target, const DdgsConfig& config, Rng& rng);

struct WeightedSamples {
  Matrix samples;
  Eigen::RowVectorXd log_weights;
};

/// Log importance weight of each path: log Phi(z_K) - sum_j [w_j ||u_j||^2 + h_j u_j . xi_j / sqrt(v_j)].
/// The frozen base drift cancels against the reference chain and does not enter.
Eigen::RowVectorXd controlled_log_weights(const Mlp* u, const TerminalPotential& potential, const PathBatch& paths);

WeightedSamples sample_ddgs(const HTransformSampler& sampler, int n, Rng& rng);
PathBatch sample_ddgs_paths(const HTransformSampler& sampler, int n, Rng& rng);

/// log of the mean of exp(v), computed stably.
double log_mean_exp(const Eigen::RowVectorXd& v);

/// Score of the marginals of a backward process, parametrized as -x + net(t, x);
/// without a network it is the N(0, I) score.
struct MarginalScore {
  std::optional<Mlp> net;

  Matrix evaluate(double t, const Matrix& x) const;
};

/// Single-step denoising score matching on backward rollouts of drift -x/2 + base + u:
/// each transition z_j -> z_{j+1} supplies the exact conditional score -xi_j / sqrt(v_j) at z_{j+1}.
MarginalScore fit_backward_marginal_score(const CorrectionSum& base, const Mlp* u, int dim, const TimeGrid& grid,
                                          const TrainingConfig& training, Rng& rng, std::vector<double>& loss_trace,
                                          std::optional<Mlp> initial = std::nullopt);

/// Loss of fit_backward_marginal_score on one batch of rollouts (mean squared error per pair).
double backward_dsm_loss(const Mlp& net, const PathBatch& paths, Eigen::VectorXd* grad = nullptr);

/// log q_0(x) of a backward process with drift -x/2 + c(t, x) via the probability flow,
/// given a score for its marginals.
Eigen::RowVectorXd flow_log_density(const BatchField& correction, const BatchField& marginal_score,
                                    const TimeGrid& grid, const Matrix& points);

struct FlowLogZ {
  double mean;
  Eigen::RowVectorXd pointwise;
};

/// log gamma(x) - log q_0(x) averaged over the given points.
FlowLogZ flow_log_z(const HTransformSampler& sampler, const BatchField& marginal_score, const Matrix& points);

}  // namespace diffbridge
