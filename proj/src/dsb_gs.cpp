#include "diffbridge/dsb_gs.hpp"

#include <cmath>
#include <memory>

#include "diffbridge/errors.hpp"

namespace diffbridge {

MarginalScore fit_marginal_score(const GsIpfState& state, Rng& rng, std::vector<double>& trace) {
  if (state.drift.empty()) return MarginalScore{};
  const DsbGsConfig& cfg = state.config;
  const int dim = state.drift.networks.front().architecture().state_dim;
  return fit_backward_marginal_score(state.drift, nullptr, dim, cfg.grid, cfg.score, rng, trace, state.score.net);
}

TerminalPotential ipf_potential(const TargetDensity& target, const CorrectionSum& drift, const MarginalScore& score,
                                const TimeGrid& grid, int flow_every) {
  if (!score.net) return reference_potential(target);
  if (flow_every < 1) throw ConfigError("flow_every", "must be positive");
  auto calls = std::make_shared<long>(0);
  TerminalPotential p;
  p.values_optional = true;
  p.evaluate = [=](const Matrix& z, Eigen::RowVectorXd& value, Matrix& grad) {
    grad = target.grad_log_gamma_batch(z) - score.evaluate(0.0, z);
    if ((*calls)++ % flow_every != 0) {
      value = Eigen::RowVectorXd::Constant(z.cols(), std::numeric_limits<double>::quiet_NaN());
      return;
    }
    const BatchField c = [&](double t, const Matrix& x) -> Matrix { return drift.evaluate(t, x); };
    const BatchField s = [&](double t, const Matrix& x) -> Matrix { return score.evaluate(t, x); };
    const Eigen::RowVectorXd log_pi0 = flow_log_density(c, s, grid, z);
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      if (!std::isfinite(log_pi0(j)))
        throw TrainingError("non-finite flow log-density at the terminal state of path " + std::to_string(j));
    value = target.log_gamma_batch(z) - log_pi0;
  };
  return p;
}

Mlp fit_h_correction(const GsIpfState& state, const TargetDensity& target, Rng& rng, std::vector<double>& trace) {
  const DsbGsConfig& cfg = state.config;
  const TerminalPotential potential = ipf_potential(target, state.drift, state.score, cfg.grid, cfg.flow_every);
  return train_controlled(state.drift, potential, target.dim, cfg.grid, cfg.correction, rng, trace);
}

double distillation_loss(const Mlp& net, const Eigen::RowVectorXd& times, const Matrix& x, const Matrix& target,
                         Eigen::VectorXd* grad) {
  const double w = 1.0 / static_cast<double>(x.cols());
  if (grad == nullptr) return w * (net.evaluate(times, x) - target).squaredNorm();
  ad::Tape tape;
  ad::Var out = net.record(tape, times, tape.constant(x), Matrix(), grad->data());
  ad::Var loss = ad::scale(ad::sum_squares(ad::sub(out, tape.constant(target))), w);
  tape.backward(loss);
  return loss.value()(0, 0);
}

DistillResult distill_corrections(const CorrectionSum& drift, const TimeGrid& grid, const TrainingConfig& training,
                                  double tolerance, int cloud_paths, Rng& rng) {
  if (drift.empty()) throw DomainError("nothing to distill");
  const int K = grid.steps();
  const int dim = drift.networks.front().architecture().state_dim;
  const PathBatch paths = rollout(nullptr, drift, grid, draw_noise(dim, cloud_paths, K, rng));
  const Eigen::Index cols = static_cast<Eigen::Index>(cloud_paths) * (K + 1);
  Matrix x(dim, cols), target(dim, cols);
  Eigen::RowVectorXd times(cols);
  for (int j = 0; j <= K; ++j) {
    const Eigen::Index off = static_cast<Eigen::Index>(j) * cloud_paths;
    const double t = paths.label(j);
    x.middleCols(off, cloud_paths) = paths.states[static_cast<std::size_t>(j)];
    target.middleCols(off, cloud_paths) = drift.evaluate(t, paths.states[static_cast<std::size_t>(j)]);
    times.segment(off, cloud_paths).setConstant(t);
  }
  const double target_norm = std::max(target.norm(), 1e-300);
  auto relative_error = [&](const Mlp& net) { return (net.evaluate(times, x) - target).norm() / target_norm; };

  // Warm start from the oldest network, which carries most of the drift.
  Mlp net = drift.networks.front();
  double err = relative_error(net);
  AdamState adam(training.adam, net.num_params());
  Eigen::VectorXd grad(net.num_params());
  const int b = std::min<int>(training.batch_size, static_cast<int>(cols));
  Eigen::RowVectorXd bt(b);
  Matrix bx(dim, b), by(dim, b);
  for (int it = 0; it < training.iterations && err >= tolerance; ++it) {
    for (int i = 0; i < b; ++i) {
      const auto c = static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(cols));
      bt(i) = times(c);
      bx.col(i) = x.col(c);
      by.col(i) = target.col(c);
    }
    grad.setZero();
    distillation_loss(net, bt, bx, by, &grad);
    apply_update(adam, net, grad, training, it, "drift distillation");
    if ((it + 1) % 100 == 0) err = relative_error(net);
  }
  err = relative_error(net);
  return {std::move(net), err};
}

std::optional<double> update_drift(GsIpfState& state, Mlp u, Rng& rng) {
  std::optional<double> distilled;
  const DsbGsConfig& cfg = state.config;
  if (static_cast<int>(state.drift.networks.size()) >= cfg.max_live_networks) {
    DistillResult d =
        distill_corrections(state.drift, cfg.grid, cfg.distill, cfg.distill_tolerance, cfg.distill_cloud_paths, rng);
    state.drift.networks.clear();
    state.drift.networks.push_back(std::move(d.net));
    distilled = d.relative_error;
  }
  state.last_correction = u;
  state.drift.networks.push_back(std::move(u));
  return distilled;
}

GsIpfState run_dsb_gs(const TargetDensity& target, const DsbGsConfig& config, Rng& rng,
                      const GsRoundObserver& observer) {
  if (config.rounds < 1) throw ConfigError("rounds", "must be at least 1");
  if (config.max_live_networks < 1) throw ConfigError("max_live_networks", "must be at least 1");
  GsIpfState state;
  state.config = config;
  for (int n = 0; n < config.rounds; ++n) {
    GsRoundRecord rec;
    rec.round = n;
    try {
      state.score = fit_marginal_score(state, rng, rec.score_trace);
      Mlp u = fit_h_correction(state, target, rng, rec.correction_trace);
      if (auto e = update_drift(state, std::move(u), rng)) rec.distill_error = *e;
    } catch (const IpfError&) {
      throw;
    } catch (const std::exception& e) {
      throw IpfError(n, "backward", e.what());
    }
    state.round = n + 1;
    state.history.push_back(std::move(rec));
    if (observer) observer(state);
  }
  return state;
}

PathBatch sample_dsb_gs_paths(const GsIpfState& state, int n, Rng& rng) {
  if (state.drift.empty()) throw DomainError("sampling needs at least one completed round");
  const int dim = state.drift.networks.front().architecture().state_dim;
  const NoiseRecord noise = draw_noise(dim, n, state.config.grid.steps(), rng);
  return rollout(nullptr, state.drift, state.config.grid, noise);
}

Matrix sample_dsb_gs(const GsIpfState& state, int n, Rng& rng) { return sample_dsb_gs_paths(state, n, rng).terminal(); }

}  // namespace diffbridge
