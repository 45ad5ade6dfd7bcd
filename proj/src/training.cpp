#include "diffbridge/training.hpp"

#include <cmath>

#include "diffbridge/errors.hpp"

namespace diffbridge {

double scheduled_learning_rate(const TrainingConfig& cfg, int iteration) {
  const double progress = cfg.iterations > 1 ? static_cast<double>(iteration) / (cfg.iterations - 1) : 0.0;
  return cfg.adam.learning_rate * std::pow(cfg.lr_final_factor, progress);
}

MlpArchitecture make_architecture(const TrainingConfig& cfg, int state_dim, int cond_dim, double horizon) {
  MlpArchitecture a;
  a.state_dim = state_dim;
  a.cond_dim = cond_dim;
  a.output_dim = state_dim;
  a.hidden = cfg.hidden;
  a.time_features = cfg.time_features;
  a.horizon = horizon;
  return a;
}

void apply_update(AdamState& state, Mlp& net, const Eigen::VectorXd& grad, const TrainingConfig& cfg, int iteration,
                  const std::string& context) {
  state.config.learning_rate = scheduled_learning_rate(cfg, iteration);
  try {
    adam_step(state, net.params(), grad);
  } catch (const TrainingError& e) {
    throw TrainingError(context + " diverged at iteration " + std::to_string(iteration) + ": " + e.what());
  }
}

}  // namespace diffbridge
