#pragma once

#include <string>
#include <vector>

#include "diffbridge/adam.hpp"
#include "diffbridge/network.hpp"

namespace diffbridge {

/// Shared knobs for every stochastic-gradient loop in the library.
struct TrainingConfig {
  int iterations = 2000;
  int batch_size = 128;
  AdamConfig adam{};
  /// Learning rate decays geometrically to learning_rate * lr_final_factor.
  double lr_final_factor = 0.1;
  std::vector<int> hidden{64, 64};
  int time_features = 16;
};

double scheduled_learning_rate(const TrainingConfig& cfg, int iteration);

MlpArchitecture make_architecture(const TrainingConfig& cfg, int state_dim, int cond_dim, double horizon);

/// One Adam update with the scheduled learning rate; `context` names the loop for error messages.
void apply_update(AdamState& state, Mlp& net, const Eigen::VectorXd& grad, const TrainingConfig& cfg, int iteration,
                  const std::string& context);

}  // namespace diffbridge
