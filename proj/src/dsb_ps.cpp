#include "diffbridge/dsb_ps.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffbridge/errors.hpp"
#include "diffbridge/metrics.hpp"

namespace diffbridge {

namespace {

const char* direction_name(Direction d) { return d == Direction::forward ? "forward" : "backward"; }

double tail_mean(const std::vector<double>& trace) {
  if (trace.empty()) return 0.0;
  const std::size_t n = std::max<std::size_t>(1, trace.size() / 10);
  return std::accumulate(trace.end() - static_cast<std::ptrdiff_t>(n), trace.end(), 0.0) / static_cast<double>(n);
}

Matrix joint_draws(const JointModel& model, int n, Rng& rng, Matrix& y) {
  Matrix x(model.latent_dim, n);
  y.resize(model.obs_dim, n);
  for (int i = 0; i < n; ++i) {
    x.col(i) = model.sample_prior(rng);
    y.col(i) = model.simulate_likelihood(x.col(i), rng);
  }
  return x;
}

MeanMatchingBatch gather(const MeanMatchingBatch& cache, const std::vector<Eigen::Index>& idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  MeanMatchingBatch b{Eigen::RowVectorXd(n), Matrix(cache.x.rows(), n), Matrix(cache.y.rows(), n),
                      Matrix(cache.residual_target.rows(), n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index c = idx[static_cast<std::size_t>(i)];
    b.times(i) = cache.times(c);
    b.x.col(i) = cache.x.col(c);
    b.y.col(i) = cache.y.col(c);
    b.residual_target.col(i) = cache.residual_target.col(c);
  }
  return b;
}

}  // namespace

DdpsConfig DsbConfig::ddps() const {
  DdpsConfig c;
  c.grid = grid;
  c.training = training;
  c.training.iterations = dsm_iterations;
  c.t_min_fraction = t_min_fraction;
  return c;
}

Vector mean_matching_target(const std::function<Vector(const Vector&)>& F, const Vector& xk, const Vector& xk1) {
  return xk1 + F(xk) - F(xk1);
}

double mean_matching_loss(const Mlp& net, const MeanMatchingBatch& batch, Eigen::VectorXd* grad) {
  const double w = 1.0 / static_cast<double>(batch.x.cols());
  if (grad == nullptr) return w * (net.evaluate(batch.times, batch.x, batch.y) - batch.residual_target).squaredNorm();
  ad::Tape tape;
  ad::Var out = net.record(tape, batch.times, tape.constant(batch.x), batch.y, grad->data());
  ad::Var loss = ad::scale(ad::sum_squares(ad::sub(out, tape.constant(batch.residual_target))), w);
  tape.backward(loss);
  return loss.value()(0, 0);
}

MeanMatchingBatch simulate_mean_matching_pairs(const IpfState& state, Direction direction, const JointModel& model,
                                               int paths, Rng& rng) {
  const TimeGrid& grid = state.config.grid;
  const int K = grid.steps();
  const int d = model.latent_dim;
  const Eigen::Index total = static_cast<Eigen::Index>(paths) * K;
  MeanMatchingBatch out{Eigen::RowVectorXd(total), Matrix(d, total), Matrix(model.obs_dim, total), Matrix(d, total)};

  if (direction == Direction::backward) {
    // Pairs from the forward chain x_{k+1} = F_k(x_k) + noise, F_k(x) = x + g (-x/2 + f(t_k, x)).
    Matrix y;
    const Matrix x0 = joint_draws(model, paths, rng, y);
    const BatchField drift = [&](double t, const Matrix& x) -> Matrix {
      return state.forward ? Matrix(-0.5 * x + state.forward->evaluate(t, x, y)) : Matrix(-0.5 * x);
    };
    const PathBatch pb = simulate(drift, grid, x0, rng, Direction::forward, Scheme::euler);
    for (int k = 0; k < K; ++k) {
      const double g = grid.step(k + 1);
      const double tk = grid.time(k);
      const Matrix& xk = pb.states[static_cast<std::size_t>(k)];
      const Matrix& xk1 = pb.states[static_cast<std::size_t>(k) + 1];
      const Matrix target = (xk - xk1) / g + drift(tk, xk) - drift(tk, xk1) - 0.5 * xk1;
      const Eigen::Index off = static_cast<Eigen::Index>(k) * paths;
      out.times.segment(off, paths).setConstant(grid.time(k + 1));
      out.x.middleCols(off, paths) = xk1;
      out.y.middleCols(off, paths) = y;
      out.residual_target.middleCols(off, paths) = target;
    }
  } else {
    // Pairs from the backward chain x_k = B_{k+1}(x_{k+1}) + noise, B(x) = x + g (x/2 + b(t_{k+1}, x)).
    if (!state.backward) throw DomainError("forward mean matching needs a backward network");
    const Mlp& b = *state.backward;
    Matrix y(model.obs_dim, paths);
    for (int i = 0; i < paths; ++i) y.col(i) = model.sample_observation(rng);
    const BatchField drift = [&](double t, const Matrix& x) -> Matrix { return 0.5 * x + b.evaluate(t, x, y); };
    const Matrix z0 = rng.normal_matrix(d, paths);
    const PathBatch pb = simulate(drift, grid, z0, rng, Direction::backward, Scheme::euler);
    for (int k = 0; k < K; ++k) {
      const double g = grid.step(k + 1);
      const double tk1 = grid.time(k + 1);
      const Matrix& xk = pb.states[static_cast<std::size_t>(K - k)];
      const Matrix& xk1 = pb.states[static_cast<std::size_t>(K - k - 1)];
      const Matrix target = (xk1 - xk) / g + drift(tk1, xk1) - drift(tk1, xk) + 0.5 * xk;
      const Eigen::Index off = static_cast<Eigen::Index>(k) * paths;
      out.times.segment(off, paths).setConstant(grid.time(k));
      out.x.middleCols(off, paths) = xk;
      out.y.middleCols(off, paths) = y;
      out.residual_target.middleCols(off, paths) = target;
    }
  }
  if (!out.residual_target.allFinite()) throw SimulationError("non-finite mean-matching targets");
  return out;
}

IpfState initial_ipf_state(const JointModel& model, const DsbConfig& config, Rng& rng) {
  if (config.rounds < 0) throw ConfigError("rounds", "must be non-negative");
  if (config.cache_paths < 1) throw ConfigError("cache_paths", "must be positive");
  if (config.cache_refresh < 1) throw ConfigError("cache_refresh", "must be positive");
  if (!(config.ema_decay >= 0.0 && config.ema_decay < 1.0)) throw ConfigError("ema_decay", "must be in [0, 1)");
  IpfState s;
  s.config = config;
  try {
    TrainedPosteriorSampler dsm = train_ddps(model, config.ddps(), rng);
    s.history.push_back({0, Direction::backward, tail_mean(dsm.loss_trace), std::move(dsm.loss_trace)});
    s.backward = std::move(dsm.score);
  } catch (const std::exception& e) {
    throw IpfError(0, "backward", e.what());
  }
  s.half_steps = 1;
  return s;
}

void ipf_half_step(IpfState& state, Direction direction, const JointModel& model, Rng& rng) {
  const DsbConfig& cfg = state.config;
  const TrainingConfig& tc = cfg.training;
  const int round = (state.half_steps + 1) / 2;
  try {
    std::optional<Mlp>& slot = direction == Direction::backward ? state.backward : state.forward;
    Mlp net = (cfg.warm_start && slot)
                  ? *slot
                  : Mlp(make_architecture(tc, model.latent_dim, model.obs_dim, cfg.grid.horizon()), rng);
    AdamState adam(tc.adam, net.num_params());
    Eigen::VectorXd grad(net.num_params());
    std::vector<double> trace;
    trace.reserve(static_cast<std::size_t>(tc.iterations));
    Vector ema = net.params();
    MeanMatchingBatch cache;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(tc.batch_size));
    for (int it = 0; it < tc.iterations; ++it) {
      if (it % cfg.cache_refresh == 0)
        cache = simulate_mean_matching_pairs(state, direction, model, cfg.cache_paths, rng);
      const auto total = static_cast<std::uint64_t>(cache.x.cols());
      for (auto& i : idx) i = static_cast<Eigen::Index>(rng.next_u64() % total);
      const MeanMatchingBatch batch = gather(cache, idx);
      grad.setZero();
      const double loss = mean_matching_loss(net, batch, &grad);
      if (!std::isfinite(loss)) throw TrainingError("mean-matching loss is non-finite at iteration " + std::to_string(it));
      apply_update(adam, net, grad, tc, it, "mean matching");
      trace.push_back(loss);
      ema = cfg.ema_decay * ema + (1.0 - cfg.ema_decay) * net.params();
    }
    net.params() = ema;
    slot = std::move(net);
    state.history.push_back({round, direction, tail_mean(trace), std::move(trace)});
    ++state.half_steps;
  } catch (const IpfError&) {
    throw;
  } catch (const std::exception& e) {
    throw IpfError(round, direction_name(direction), e.what());
  }
}

double forward_terminal_ks(const IpfState& state, const JointModel& model) {
  const DsbConfig& cfg = state.config;
  Rng rng(cfg.diagnostic_seed);
  const int n = cfg.diagnostic_paths;
  Matrix x0, y;
  if (cfg.diagnostic_y && model.analytic_posterior) {
    const GaussianParams post = model.analytic_posterior(*cfg.diagnostic_y);
    x0.resize(model.latent_dim, n);
    for (int i = 0; i < n; ++i) x0.col(i) = post.sample(rng);
    y = cfg.diagnostic_y->replicate(1, n);
  } else {
    x0 = joint_draws(model, n, rng, y);
  }
  const BatchField drift = [&](double t, const Matrix& x) -> Matrix {
    return state.forward ? Matrix(-0.5 * x + state.forward->evaluate(t, x, y)) : Matrix(-0.5 * x);
  };
  return ks_standard_normal(simulate(drift, cfg.grid, x0, rng, Direction::forward, Scheme::euler).terminal());
}

IpfState run_dsb_ps(const JointModel& model, const DsbConfig& config, Rng& rng, const HalfStepObserver& observer) {
  IpfState state = initial_ipf_state(model, config, rng);
  state.terminal_ks.push_back(forward_terminal_ks(state, model));
  if (observer) observer(state);
  for (int n = 1; n <= config.rounds; ++n) {
    ipf_half_step(state, Direction::forward, model, rng);
    state.terminal_ks.push_back(forward_terminal_ks(state, model));
    if (observer) observer(state);
    ipf_half_step(state, Direction::backward, model, rng);
    if (observer) observer(state);
  }
  return state;
}

PathBatch sample_dsb_posterior_paths(const IpfState& state, const Vector& y, int n, Rng& rng) {
  if (!state.backward) throw DomainError("sampling needs a trained backward network");
  const Mlp& b = *state.backward;
  const int d = b.architecture().state_dim;
  if (y.size() != b.architecture().cond_dim) throw DimensionError("observation has the wrong dimension");
  const Matrix ycol = y;
  const BatchField drift = [&](double t, const Matrix& z) -> Matrix { return 0.5 * z + b.evaluate(t, z, ycol); };
  Matrix z0 = rng.normal_matrix(d, n);
  return simulate(drift, state.config.grid, z0, rng, Direction::backward, Scheme::euler);
}

Matrix sample_dsb_posterior(const IpfState& state, const Vector& y, int n, Rng& rng) {
  return sample_dsb_posterior_paths(state, y, n, rng).terminal();
}

}  // namespace diffbridge
