#pragma once

#include <Eigen/Core>

namespace diffbridge {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;

  AdamState() = default;
  AdamState(AdamConfig cfg, Eigen::Index size)
      : config(cfg), first_moment(Eigen::VectorXd::Zero(size)), second_moment(Eigen::VectorXd::Zero(size)) {}
};

/// Bias-corrected Adam update of params in place. Throws TrainingError on a
/// non-finite gradient, leaving params and state untouched.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& gradient);

}  // namespace diffbridge
