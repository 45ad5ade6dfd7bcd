#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "diffbridge/rng.hpp"

namespace diffbridge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Discretization 0 = t_0 < t_1 < ... < t_K = T of a diffusion horizon.
class TimeGrid {
 public:
  static TimeGrid uniform(double horizon, int steps);
  explicit TimeGrid(std::vector<double> times);

  double horizon() const { return times_.back() - times_.front(); }
  int steps() const { return static_cast<int>(times_.size()) - 1; }
  double time(int k) const { return times_[static_cast<std::size_t>(k)]; }
  /// gamma_k = t_k - t_{k-1}, k in [1, K].
  double step(int k) const { return times_[static_cast<std::size_t>(k)] - times_[static_cast<std::size_t>(k) - 1]; }
  const std::vector<double>& times() const { return times_; }

 private:
  std::vector<double> times_;
};

enum class Direction { forward, backward };

/// One trajectory: states(:, j) is the j-th visited state in simulation order.
/// For a backward path, state j sits at forward time t_{K-j}.
struct Path {
  TimeGrid grid;
  Matrix states;
  Direction direction = Direction::forward;
  std::optional<Matrix> noise;

  int dim() const { return static_cast<int>(states.rows()); }
};

/// A batch of trajectories simulated together; states[j] is d x n.
struct PathBatch {
  TimeGrid grid;
  std::vector<Matrix> states;
  std::vector<Matrix> noise;
  Direction direction = Direction::forward;

  /// Forward-time label of simulation index j.
  double label(int j) const {
    return direction == Direction::forward ? grid.time(j) : grid.time(grid.steps() - j);
  }
  /// Step size used to go from index j to j+1.
  double step_size(int j) const {
    return direction == Direction::forward ? grid.step(j + 1) : grid.step(grid.steps() - j);
  }
  const Matrix& terminal() const { return states.back(); }
  Path path(Eigen::Index column) const;
};

/// Transition of dX = -X/2 dt + dB over elapsed time t: X_t | X_0 ~ N(alpha X_0, variance I).
struct OUTransition {
  double elapsed;
  double alpha;
  double variance;
};

OUTransition ou_moments(double t);

/// grad_{x_t} log p_{t|0}(x_t | x_0) = (alpha x_0 - x_t) / v.
Vector ou_transition_score(const Vector& x0, const Vector& xt, double t);

struct GaussianMarginal {
  Vector mean;
  double variance;
};

/// Law of X_t when X_0 ~ N(m0, s0sq I) under the OU noising process.
GaussianMarginal ou_gaussian_marginal(const Vector& m0, double s0sq, double t);

using DriftFunction = std::function<Vector(double t, const Vector& x)>;
using ConditionalDrift = std::function<Vector(double t, const Vector& x, const Vector& y)>;
/// Column-wise vector field on a d x n batch.
using BatchField = std::function<Matrix(double t, const Matrix& x)>;

enum class Scheme {
  /// x' = x + h f(t, x) + sqrt(h) xi
  euler,
  /// x' = alpha(h) x + h c(t, x) + sqrt(v(h)) xi for drift -x/2 + c; the field passed is c.
  ou_exponential,
};

/// Batched explicit simulation with left-point drift evaluation. Backward
/// direction walks the grid from t_K to t_0 and hands the drift forward-time labels.
PathBatch simulate(const BatchField& drift, const TimeGrid& grid, const Matrix& x0, Rng& rng,
                   Direction direction = Direction::forward, Scheme scheme = Scheme::euler);

Path euler_maruyama(const DriftFunction& drift, const TimeGrid& grid, const Vector& x0, Rng& rng);
Path euler_maruyama(const ConditionalDrift& drift, const TimeGrid& grid, const Vector& x0, Rng& rng,
                    const Vector& y);

/// Exact divergence hook: returns div v(t, x) for every column.
using DivergenceFunction = std::function<Eigen::RowVectorXd(double t, const Matrix& x)>;

struct FlowResult {
  Path path;
  double logdet;
};

struct FlowBatchResult {
  Matrix terminal;
  Eigen::RowVectorXd logdet;
};

/// Probability-flow ODE dx = (f - score/2) dt integrated by RK4 from t_0 to t_K,
/// accumulating logdet = int div so that log p_0(x_0) = log p_T(x_T) + logdet.
FlowResult probability_flow(const DriftFunction& drift, const DriftFunction& score,
                            const TimeGrid& grid, const Vector& x0);

FlowBatchResult probability_flow_batch(const BatchField& drift, const BatchField& score,
                                       const TimeGrid& grid, const Matrix& x0,
                                       const DivergenceFunction& exact_divergence = {});

/// Central finite-difference divergence with per-column step 1e-4 (1 + |x|_inf).
Eigen::RowVectorXd fd_divergence(const BatchField& field, double t, const Matrix& x);

BatchField lift(const DriftFunction& f);

}  // namespace diffbridge
