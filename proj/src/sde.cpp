#include "diffbridge/sde.hpp"

#include <cmath>
#include <string>

#include "diffbridge/errors.hpp"

namespace diffbridge {

TimeGrid TimeGrid::uniform(double horizon, int steps) {
  if (!(horizon > 0.0)) throw DomainError("time grid horizon must be positive");
  if (steps < 1) throw DomainError("time grid needs at least one step");
  std::vector<double> times(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) times[static_cast<std::size_t>(k)] = horizon * k / steps;
  times.back() = horizon;
  return TimeGrid(std::move(times));
}

TimeGrid::TimeGrid(std::vector<double> times) : times_(std::move(times)) {
  if (times_.size() < 2) throw DomainError("time grid needs at least two points");
  for (std::size_t k = 1; k < times_.size(); ++k)
    if (!(times_[k] > times_[k - 1])) throw DomainError("time grid must be strictly increasing");
}

Path PathBatch::path(Eigen::Index column) const {
  const auto d = states.front().rows();
  Matrix s(d, static_cast<Eigen::Index>(states.size()));
  for (std::size_t j = 0; j < states.size(); ++j) s.col(static_cast<Eigen::Index>(j)) = states[j].col(column);
  std::optional<Matrix> xi;
  if (!noise.empty()) {
    Matrix n(d, static_cast<Eigen::Index>(noise.size()));
    for (std::size_t j = 0; j < noise.size(); ++j) n.col(static_cast<Eigen::Index>(j)) = noise[j].col(column);
    xi = std::move(n);
  }
  return Path{grid, std::move(s), direction, std::move(xi)};
}

OUTransition ou_moments(double t) {
  if (!(t > 0.0)) throw DomainError("OU transition requires elapsed time t > 0, got " + std::to_string(t));
  return {t, std::exp(-0.5 * t), -std::expm1(-t)};
}

Vector ou_transition_score(const Vector& x0, const Vector& xt, double t) {
  if (x0.size() != xt.size()) throw DimensionError("ou_transition_score: x0 and xt differ in dimension");
  const auto m = ou_moments(t);
  return (m.alpha * x0 - xt) / m.variance;
}

GaussianMarginal ou_gaussian_marginal(const Vector& m0, double s0sq, double t) {
  if (s0sq < 0.0) throw DomainError("initial variance must be nonnegative");
  if (t < 0.0) throw DomainError("marginal time must be nonnegative");
  const double decay = std::exp(-t);
  return {std::exp(-0.5 * t) * m0, s0sq * decay - std::expm1(-t)};
}

PathBatch simulate(const BatchField& drift, const TimeGrid& grid, const Matrix& x0, Rng& rng,
                   Direction direction, Scheme scheme) {
  const int K = grid.steps();
  PathBatch out{grid, {}, {}, direction};
  out.states.reserve(static_cast<std::size_t>(K) + 1);
  out.noise.reserve(static_cast<std::size_t>(K));
  out.states.push_back(x0);
  for (int j = 0; j < K; ++j) {
    const Matrix& x = out.states.back();
    const double t = out.label(j);
    const double h = out.step_size(j);
    Matrix f = drift(t, x);
    if (f.rows() != x.rows() || f.cols() != x.cols())
      throw DimensionError("drift returned a batch of the wrong shape at step " + std::to_string(j));
    if (!f.allFinite()) throw SimulationError("non-finite drift at step " + std::to_string(j));
    Matrix xi = rng.normal_matrix(x.rows(), x.cols());
    Matrix next;
    if (scheme == Scheme::euler) {
      next = x + h * f + std::sqrt(h) * xi;
    } else {
      const auto m = ou_moments(h);
      next = m.alpha * x + h * f + std::sqrt(m.variance) * xi;
    }
    if (!next.allFinite()) throw SimulationError("non-finite state at step " + std::to_string(j + 1));
    out.noise.push_back(std::move(xi));
    out.states.push_back(std::move(next));
  }
  return out;
}

BatchField lift(const DriftFunction& f) {
  return [f](double t, const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Vector v = f(t, x.col(j));
      if (v.size() != x.rows()) throw DimensionError("drift output dimension mismatch");
      out.col(j) = v;
    }
    return out;
  };
}

Path euler_maruyama(const DriftFunction& drift, const TimeGrid& grid, const Vector& x0, Rng& rng) {
  return simulate(lift(drift), grid, x0, rng).path(0);
}

Path euler_maruyama(const ConditionalDrift& drift, const TimeGrid& grid, const Vector& x0, Rng& rng,
                    const Vector& y) {
  return euler_maruyama([&](double t, const Vector& x) { return drift(t, x, y); }, grid, x0, rng);
}

Eigen::RowVectorXd fd_divergence(const BatchField& field, double t, const Matrix& x) {
  const Eigen::Index d = x.rows();
  const Eigen::RowVectorXd h = 1e-4 * (1.0 + x.cwiseAbs().colwise().maxCoeff().array()).matrix();
  Eigen::RowVectorXd div = Eigen::RowVectorXd::Zero(x.cols());
  for (Eigen::Index i = 0; i < d; ++i) {
    Matrix up = x, down = x;
    up.row(i) += h;
    down.row(i) -= h;
    const Matrix fu = field(t, up);
    const Matrix fd = field(t, down);
    div += ((fu.row(i) - fd.row(i)).array() / (2.0 * h.array())).matrix();
  }
  return div;
}

namespace {

struct FlowState {
  Matrix x;
  Eigen::RowVectorXd logdet;
};

}  // namespace

FlowBatchResult probability_flow_batch(const BatchField& drift, const BatchField& score,
                                       const TimeGrid& grid, const Matrix& x0,
                                       const DivergenceFunction& exact_divergence) {
  const BatchField velocity = [&](double t, const Matrix& x) -> Matrix {
    return drift(t, x) - 0.5 * score(t, x);
  };
  auto rhs = [&](double t, const Matrix& x) {
    Matrix v = velocity(t, x);
    Eigen::RowVectorXd div = exact_divergence ? exact_divergence(t, x) : fd_divergence(velocity, t, x);
    return FlowState{std::move(v), std::move(div)};
  };
  FlowState s{x0, Eigen::RowVectorXd::Zero(x0.cols())};
  for (int k = 1; k <= grid.steps(); ++k) {
    const double t = grid.time(k - 1);
    const double h = grid.step(k);
    const FlowState k1 = rhs(t, s.x);
    const FlowState k2 = rhs(t + 0.5 * h, s.x + 0.5 * h * k1.x);
    const FlowState k3 = rhs(t + 0.5 * h, s.x + 0.5 * h * k2.x);
    const FlowState k4 = rhs(t + h, s.x + h * k3.x);
    s.x += (h / 6.0) * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
    s.logdet += (h / 6.0) * (k1.logdet + 2.0 * k2.logdet + 2.0 * k3.logdet + k4.logdet);
    if (!s.x.allFinite() || !s.logdet.allFinite())
      throw SimulationError("probability flow produced a non-finite state at step " + std::to_string(k));
  }
  return {std::move(s.x), std::move(s.logdet)};
}

FlowResult probability_flow(const DriftFunction& drift, const DriftFunction& score,
                            const TimeGrid& grid, const Vector& x0) {
  const BatchField f = lift(drift);
  const BatchField s = lift(score);
  Path path{grid, Matrix(x0.size(), grid.steps() + 1), Direction::forward, std::nullopt};
  path.states.col(0) = x0;
  double logdet = 0.0;
  Matrix x = x0;
  // step-by-step so the visited states are recorded on the grid
  for (int k = 1; k <= grid.steps(); ++k) {
    const TimeGrid sub({grid.time(k - 1), grid.time(k)});
    const auto r = probability_flow_batch(f, s, sub, x);
    x = r.terminal;
    logdet += r.logdet(0);
    path.states.col(k) = x;
  }
  return {std::move(path), logdet};
}

}  // namespace diffbridge
