#include "diffbridge/ddgs.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "diffbridge/errors.hpp"

namespace diffbridge {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// log N(a; mean, var I) per column.
Eigen::RowVectorXd log_normal_columns(const Matrix& a, const Matrix& mean, double var) {
  const double d = static_cast<double>(a.rows());
  return (-0.5 * (a - mean).colwise().squaredNorm().array() / var - 0.5 * d * (kLog2Pi + std::log(var))).matrix();
}

}  // namespace

Matrix CorrectionSum::evaluate(double t, const Matrix& x) const {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (const auto& net : networks) out += net.evaluate(t, x);
  return out;
}

std::optional<ad::Var> CorrectionSum::record(ad::Tape& tape, const Eigen::RowVectorXd& times, ad::Var x) const {
  std::optional<ad::Var> out;
  for (const auto& net : networks) {
    ad::Var v = net.record(tape, times, x, Matrix(), nullptr);
    out = out ? ad::add(*out, v) : v;
  }
  return out;
}

TerminalPotential reference_potential(const TargetDensity& target) {
  return {[target](const Matrix& z, Eigen::RowVectorXd& value, Matrix& grad) {
    value.resize(z.cols());
    grad.resize(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double lg = target.log_gamma(z.col(j));
      if (!std::isfinite(lg))
        throw TrainingError("non-finite log gamma at the terminal state of path " + std::to_string(j));
      value(j) = lg - log_standard_normal(z.col(j));
      grad.col(j) = target.grad_log_gamma(z.col(j)) + z.col(j);
    }
  }};
}

NoiseRecord draw_noise(int dim, int n, int steps, Rng& rng) {
  NoiseRecord r{rng.normal_matrix(dim, n), {}};
  r.increments.reserve(static_cast<std::size_t>(steps));
  for (int j = 0; j < steps; ++j) r.increments.push_back(rng.normal_matrix(dim, n));
  return r;
}

double energy_weight(double h) {
  const auto m = ou_moments(h);
  return h * h / (2.0 * m.variance);
}

PathBatch rollout(const Mlp* u, const CorrectionSum& base, const TimeGrid& grid, const NoiseRecord& noise) {
  const int K = grid.steps();
  if (static_cast<int>(noise.increments.size()) != K) throw DimensionError("noise record does not match the grid");
  PathBatch out{grid, {}, noise.increments, Direction::backward};
  out.states.reserve(static_cast<std::size_t>(K) + 1);
  out.states.push_back(noise.z0);
  for (int j = 0; j < K; ++j) {
    const Matrix& z = out.states.back();
    const double t = out.label(j);
    const double h = out.step_size(j);
    const auto m = ou_moments(h);
    Matrix drift = base.evaluate(t, z);
    if (u != nullptr) drift += u->evaluate(t, z);
    if (!drift.allFinite()) throw SimulationError("non-finite drift at step " + std::to_string(j));
    out.states.push_back(m.alpha * z + h * drift + std::sqrt(m.variance) * noise.increments[static_cast<std::size_t>(j)]);
  }
  return out;
}

ControlledLoss controlled_kl_loss(const Mlp& u, const CorrectionSum& base, const TerminalPotential& potential,
                                  const TimeGrid& grid, const NoiseRecord& noise, Eigen::VectorXd* grad) {
  const int K = grid.steps();
  if (static_cast<int>(noise.increments.size()) != K) throw DimensionError("noise record does not match the grid");
  const auto n = noise.z0.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  ad::Tape tape;
  ad::Var z = tape.constant(noise.z0);
  std::vector<ad::Var> energies;
  Eigen::RowVectorXd per_path = Eigen::RowVectorXd::Zero(n);
  for (int j = 0; j < K; ++j) {
    const double t = grid.time(K - j);
    const double h = grid.step(K - j);
    const auto m = ou_moments(h);
    const double w = energy_weight(h);
    const Eigen::RowVectorXd times = broadcast_time(t, n);
    ad::Var uj = u.record(tape, times, z, Matrix(), grad ? grad->data() : nullptr);
    per_path += w * uj.value().colwise().squaredNorm();
    energies.push_back(ad::scale(ad::sum_squares(uj), w * inv_n));
    ad::Var drift = uj;
    if (auto c = base.record(tape, times, z)) drift = ad::add(drift, *c);
    z = ad::add(ad::add(ad::scale(z, m.alpha), ad::scale(drift, h)),
                tape.constant(std::sqrt(m.variance) * noise.increments[static_cast<std::size_t>(j)]));
  }
  Eigen::RowVectorXd log_phi;
  Matrix log_phi_grad;
  potential.evaluate(z.value(), log_phi, log_phi_grad);
  const bool value_missing = potential.values_optional && log_phi.array().isNaN().any();
  if (value_missing) log_phi.setZero();
  if (!log_phi.allFinite() || !log_phi_grad.allFinite()) throw TrainingError("non-finite terminal potential");
  per_path -= log_phi;

  ad::Var loss = ad::scale(ad::sum(ad::columnwise(z, log_phi, log_phi_grad)), -inv_n);
  for (const auto& e : energies) loss = ad::add(loss, e);
  if (grad != nullptr) tape.backward(loss);
  if (value_missing) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, Eigen::RowVectorXd::Constant(n, nan)};
  }
  return {loss.value()(0, 0), std::move(per_path)};
}

ControlledLoss reverse_kl_loss(const Mlp& u, const TargetDensity& target, const TimeGrid& grid,
                               const NoiseRecord& noise, Eigen::VectorXd* grad) {
  return controlled_kl_loss(u, CorrectionSum{}, reference_potential(target), grid, noise, grad);
}

Mlp train_controlled(const CorrectionSum& base, const TerminalPotential& potential, int dim, const TimeGrid& grid,
                     const TrainingConfig& training, Rng& rng, std::vector<double>& loss_trace,
                     std::optional<Mlp> initial) {
  Mlp u = initial ? std::move(*initial) : Mlp(make_architecture(training, dim, 0, grid.horizon()), rng);
  AdamState adam(training.adam, u.num_params());
  Eigen::VectorXd grad(u.num_params());
  for (int it = 0; it < training.iterations; ++it) {
    const NoiseRecord noise = draw_noise(dim, training.batch_size, grid.steps(), rng);
    grad.setZero();
    const auto r = controlled_kl_loss(u, base, potential, grid, noise, &grad);
    const bool skipped = potential.values_optional && std::isnan(r.loss);
    if (!std::isfinite(r.loss) && !skipped)
      throw TrainingError("reverse-KL loss is non-finite at iteration " + std::to_string(it));
    apply_update(adam, u, grad, training, it, "reverse-KL training");
    if (!skipped) loss_trace.push_back(r.loss);
  }
  return u;
}

HTransformSampler train_ddgs(const TargetDensity& target, const DdgsConfig& config, Rng& rng) {
  std::vector<double> trace;
  Mlp u = train_controlled(CorrectionSum{}, reference_potential(target), target.dim, config.grid, config.training, rng,
                           trace);
  return {std::move(u), target, config, std::move(trace)};
}

Eigen::RowVectorXd controlled_log_weights(const Mlp* u, const TerminalPotential& potential, const PathBatch& paths) {
  const int K = paths.grid.steps();
  Eigen::RowVectorXd log_phi;
  Matrix unused;
  potential.evaluate(paths.terminal(), log_phi, unused);
  Eigen::RowVectorXd lw = log_phi;
  if (u == nullptr) return lw;
  for (int j = 0; j < K; ++j) {
    const double h = paths.step_size(j);
    const auto m = ou_moments(h);
    const Matrix uj = u->evaluate(paths.label(j), paths.states[static_cast<std::size_t>(j)]);
    lw -= energy_weight(h) * uj.colwise().squaredNorm();
    lw -= (h / std::sqrt(m.variance)) * uj.cwiseProduct(paths.noise[static_cast<std::size_t>(j)]).colwise().sum();
  }
  return lw;
}

PathBatch sample_ddgs_paths(const HTransformSampler& sampler, int n, Rng& rng) {
  const NoiseRecord noise = draw_noise(sampler.target.dim, n, sampler.config.grid.steps(), rng);
  return rollout(&sampler.correction, CorrectionSum{}, sampler.config.grid, noise);
}

WeightedSamples sample_ddgs(const HTransformSampler& sampler, int n, Rng& rng) {
  const PathBatch paths = sample_ddgs_paths(sampler, n, rng);
  const int K = paths.grid.steps();
  // target path law: gamma(z_K) times the forward OU chain run from z_K back to z_0;
  // proposal: N(z_0) times the controlled backward chain.
  Eigen::RowVectorXd lw = sampler.target.log_gamma_batch(paths.terminal());
  lw -= log_normal_columns(paths.states.front(), Matrix::Zero(paths.states.front().rows(), n), 1.0);
  for (int j = 0; j < K; ++j) {
    const double h = paths.step_size(j);
    const auto m = ou_moments(h);
    const Matrix& z = paths.states[static_cast<std::size_t>(j)];
    const Matrix& z_next = paths.states[static_cast<std::size_t>(j) + 1];
    const Matrix mean_q = m.alpha * z + h * sampler.correction.evaluate(paths.label(j), z);
    lw += log_normal_columns(z, m.alpha * z_next, m.variance);
    lw -= log_normal_columns(z_next, mean_q, m.variance);
  }
  return {paths.terminal(), std::move(lw)};
}

double log_mean_exp(const Eigen::RowVectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().mean());
}

Matrix MarginalScore::evaluate(double t, const Matrix& x) const {
  Matrix s = -x;
  if (net) s += net->evaluate(t, x);
  return s;
}

double backward_dsm_loss(const Mlp& net, const PathBatch& paths, Eigen::VectorXd* grad) {
  const int K = paths.grid.steps();
  const auto d = paths.states.front().rows();
  const auto n = paths.states.front().cols();
  const Eigen::Index cols = n * (K + 1);
  Matrix x(d, cols), target(d, cols);
  Eigen::RowVectorXd times(cols);
  // Z_0 ~ N(0, I) exactly, so its score target is -z_0.
  x.leftCols(n) = paths.states.front();
  target.leftCols(n) = -paths.states.front();
  times.head(n).setConstant(paths.label(0));
  for (int j = 0; j < K; ++j) {
    const auto m = ou_moments(paths.step_size(j));
    const Eigen::Index off = n * (j + 1);
    x.middleCols(off, n) = paths.states[static_cast<std::size_t>(j) + 1];
    target.middleCols(off, n) = -paths.noise[static_cast<std::size_t>(j)] / std::sqrt(m.variance);
    times.segment(off, n).setConstant(paths.label(j + 1));
  }
  // network models score + x
  const Matrix residual_target = target + x;
  const double w = 1.0 / static_cast<double>(cols);
  if (grad == nullptr) return w * (net.evaluate(times, x) - residual_target).squaredNorm();
  ad::Tape tape;
  ad::Var out = net.record(tape, times, tape.constant(x), Matrix(), grad->data());
  ad::Var loss = ad::scale(ad::sum_squares(ad::sub(out, tape.constant(residual_target))), w);
  tape.backward(loss);
  return loss.value()(0, 0);
}

MarginalScore fit_backward_marginal_score(const CorrectionSum& base, const Mlp* u, int dim, const TimeGrid& grid,
                                          const TrainingConfig& training, Rng& rng, std::vector<double>& loss_trace,
                                          std::optional<Mlp> initial) {
  Mlp net = initial ? std::move(*initial) : Mlp(make_architecture(training, dim, 0, grid.horizon()), rng);
  AdamState adam(training.adam, net.num_params());
  Eigen::VectorXd grad(net.num_params());
  for (int it = 0; it < training.iterations; ++it) {
    const NoiseRecord noise = draw_noise(dim, training.batch_size, grid.steps(), rng);
    const PathBatch paths = rollout(u, base, grid, noise);
    grad.setZero();
    const double loss = backward_dsm_loss(net, paths, &grad);
    if (!std::isfinite(loss)) throw TrainingError("marginal-score DSM loss is non-finite at iteration " + std::to_string(it));
    apply_update(adam, net, grad, training, it, "marginal-score DSM");
    loss_trace.push_back(loss);
  }
  return MarginalScore{std::move(net)};
}

Eigen::RowVectorXd flow_log_density(const BatchField& correction, const BatchField& marginal_score,
                                    const TimeGrid& grid, const Matrix& points) {
  // Forward-time representation of the backward process: drift -b + s with b = -x/2 + c,
  // so the flow velocity is -(b - s/2).
  const BatchField forward_drift = [&](double t, const Matrix& x) -> Matrix {
    return 0.5 * x - correction(t, x) + marginal_score(t, x);
  };
  const auto r = probability_flow_batch(forward_drift, marginal_score, grid, points);
  const double d = static_cast<double>(points.rows());
  const Eigen::RowVectorXd log_pT =
      (-0.5 * r.terminal.colwise().squaredNorm().array() - 0.5 * d * kLog2Pi).matrix();
  return log_pT + r.logdet;
}

FlowLogZ flow_log_z(const HTransformSampler& sampler, const BatchField& marginal_score, const Matrix& points) {
  const BatchField correction = [&](double t, const Matrix& x) -> Matrix {
    return sampler.correction.evaluate(t, x);
  };
  const Eigen::RowVectorXd log_q0 = flow_log_density(correction, marginal_score, sampler.config.grid, points);
  const Eigen::RowVectorXd est = sampler.target.log_gamma_batch(points) - log_q0;
  return {est.mean(), est};
}

}  // namespace diffbridge
