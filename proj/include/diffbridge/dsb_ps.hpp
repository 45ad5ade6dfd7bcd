#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "diffbridge/ddps.hpp"
#include "diffbridge/models.hpp"
#include "diffbridge/network.hpp"
#include "diffbridge/sde.hpp"
#include "diffbridge/training.hpp"

namespace diffbridge {

struct DsbConfig {
  TimeGrid grid = TimeGrid::uniform(1.0, 32);
  /// IPF rounds after the initial DSM round; backward networks are trained N + 1 times.
  int rounds = 5;
  /// Mean-matching half-steps (rounds >= 1).
  TrainingConfig training{2000, 1024};
  /// Gradient steps of the round-0 DSM fit; batch size and optimizer come from `training`.
  int dsm_iterations = 2000;
  double t_min_fraction = 1e-3;
  /// Trajectories simulated per cache refresh, and the refresh period in gradient steps.
  int cache_paths = 4096;
  int cache_refresh = 100;
  /// Decay of the parameter moving average kept during each half-step; 0 keeps the last iterate.
  double ema_decay = 0.0;
  /// Initialize each half-step from the previous network of the same direction.
  bool warm_start = true;
  /// Observation for the forward-terminal diagnostic; without it (or without an analytic
  /// posterior) the diagnostic pools over y ~ p(y).
  std::optional<Vector> diagnostic_y;
  int diagnostic_paths = 2000;
  std::uint64_t diagnostic_seed = 0x5eed;

  /// Round-0 settings as a DDPS configuration.
  DdpsConfig ddps() const;
};

struct HalfStepRecord {
  int round;
  Direction direction;
  double final_loss;  ///< mean of the last 10% of the loss trace
  std::vector<double> loss_trace;
};

struct IpfState {
  /// Drift x/2 + backward(t, x, y), simulated from t_K down to t_0.
  std::optional<Mlp> backward;
  /// Drift -x/2 + forward(t, x, y); absent until the first forward half-step (f^0 = -x/2).
  std::optional<Mlp> forward;
  DsbConfig config;
  /// Completed half-steps; odd means the backward network was refreshed last.
  int half_steps = 0;
  std::vector<HalfStepRecord> history;
  /// KS of the forward terminal marginal vs N(0, I) under f^{2n}, n = 0, 1, ...
  std::vector<double> terminal_ks;

  int round() const { return half_steps / 2; }
};

/// x_{k+1} + F(x_k) - F(x_{k+1}) for the discrete map F of the opposite-direction chain.
Vector mean_matching_target(const std::function<Vector(const Vector&)>& F, const Vector& xk, const Vector& xk1);

/// Regression pairs for a drift network: residual targets are drift targets minus the
/// reference part (+-x/2), expressed in drift units.
struct MeanMatchingBatch {
  Eigen::RowVectorXd times;
  Matrix x;
  Matrix y;
  Matrix residual_target;
};

/// mean_i || net(t_i, x_i, y_i) - residual_target_i ||^2.
double mean_matching_loss(const Mlp& net, const MeanMatchingBatch& batch, Eigen::VectorXd* grad = nullptr);

/// Simulates `paths` trajectories of the state's current opposite-direction chain and turns
/// every transition into one regression pair for the `direction` network.
MeanMatchingBatch simulate_mean_matching_pairs(const IpfState& state, Direction direction, const JointModel& model,
                                               int paths, Rng& rng);

/// Round 0 and fresh states: DSM trains the first backward network (identical to train_ddps).
IpfState initial_ipf_state(const JointModel& model, const DsbConfig& config, Rng& rng);

/// Trains the `direction` network by mean matching against the frozen opposite network.
void ipf_half_step(IpfState& state, Direction direction, const JointModel& model, Rng& rng);

/// KS distance of the forward chain's terminal marginal from N(0, I).
double forward_terminal_ks(const IpfState& state, const JointModel& model);

using HalfStepObserver = std::function<void(const IpfState&)>;

/// Round 0 by DSM, then `rounds` forward/backward mean-matching pairs. The final forward
/// half-step of the textbook loop only matters for a further round and is not run.
IpfState run_dsb_ps(const JointModel& model, const DsbConfig& config, Rng& rng,
                    const HalfStepObserver& observer = {});

PathBatch sample_dsb_posterior_paths(const IpfState& state, const Vector& y, int n, Rng& rng);
/// Backward Euler from N(0, I) with the current backward drift; d x n terminal states.
Matrix sample_dsb_posterior(const IpfState& state, const Vector& y, int n, Rng& rng);

}  // namespace diffbridge
