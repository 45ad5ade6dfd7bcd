#include "diffbridge/adam.hpp"

#include <cmath>

#include "diffbridge/errors.hpp"

namespace diffbridge {

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& gradient) {
  if (gradient.size() != params.size() || state.first_moment.size() != params.size())
    throw DimensionError("adam_step: parameter, gradient and moment sizes differ");
  if (!gradient.allFinite()) throw TrainingError("non-finite gradient at optimizer step " + std::to_string(state.step + 1));
  const auto& c = state.config;
  ++state.step;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * gradient;
  state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * gradient.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.array() -= c.learning_rate * (state.first_moment.array() / bc1) /
                    ((state.second_moment.array() / bc2).sqrt() + c.epsilon);
}

}  // namespace diffbridge
