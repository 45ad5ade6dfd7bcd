#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "diffbridge/ddgs.hpp"
#include "diffbridge/models.hpp"
#include "diffbridge/sde.hpp"
#include "diffbridge/training.hpp"

namespace diffbridge {

struct DsbGsConfig {
  TimeGrid grid = TimeGrid::uniform(1.0, 32);
  /// Number of IPF rounds; round 0 is the denoising general sampler.
  int rounds = 3;
  /// Reverse-KL fit of each correction.
  TrainingConfig correction{1500, 128};
  /// DSM fit of the backward marginal score (rounds >= 1).
  TrainingConfig score{6000, 128};
  /// The flow log-density enters the loss value every `flow_every` iterations; the
  /// gradient always uses the score network.
  int flow_every = 50;
  /// Live correction networks kept before they are distilled into one.
  int max_live_networks = 2;
  TrainingConfig distill{4000, 512};
  double distill_tolerance = 1e-3;
  int distill_cloud_paths = 1024;

  /// Round-0 settings as a DDGS configuration.
  DdgsConfig ddgs() const { return {grid, correction}; }
};

struct GsRoundRecord {
  int round = 0;
  std::vector<double> score_trace;
  std::vector<double> correction_trace;
  /// Relative L2 error of the distillation that preceded this round's drift update; NaN if none.
  double distill_error = std::numeric_limits<double>::quiet_NaN();
};

struct GsIpfState {
  int round = 0;
  DsbGsConfig config;
  /// Backward drift f^{2n} = -x/2 + sum of live networks.
  CorrectionSum drift;
  /// Score of the Pi^{2n} marginals; analytic -x while no network is set.
  MarginalScore score;
  std::optional<Mlp> last_correction;
  std::vector<GsRoundRecord> history;
};

/// Round 0: the analytic N(0, I) score. Later rounds: DSM on backward rollouts of f^{2n}.
MarginalScore fit_marginal_score(const GsIpfState& state, Rng& rng, std::vector<double>& trace);

/// log Phi = log gamma - log Pi_0 with log Pi_0 from the probability flow (every `flow_every`
/// calls) and grad log Pi_0 = s(0, z). Without a score network this is reference_potential.
TerminalPotential ipf_potential(const TargetDensity& target, const CorrectionSum& drift, const MarginalScore& score,
                                const TimeGrid& grid, int flow_every);

/// Reverse-KL fit of u^{2n} for the proposal f^{2n} + u.
Mlp fit_h_correction(const GsIpfState& state, const TargetDensity& target, Rng& rng, std::vector<double>& trace);

struct DistillResult {
  Mlp net;
  double relative_error;
};

/// Regresses one network onto the summed corrections on a cloud of backward rollout states.
DistillResult distill_corrections(const CorrectionSum& drift, const TimeGrid& grid, const TrainingConfig& training,
                                  double tolerance, int cloud_paths, Rng& rng);

/// Loss of distill_corrections on given regression pairs.
double distillation_loss(const Mlp& net, const Eigen::RowVectorXd& times, const Matrix& x, const Matrix& target,
                         Eigen::VectorXd* grad = nullptr);

/// f^{2n+2} = f^{2n} + u; returns the distillation error when one happened.
std::optional<double> update_drift(GsIpfState& state, Mlp u, Rng& rng);

using GsRoundObserver = std::function<void(const GsIpfState&)>;

GsIpfState run_dsb_gs(const TargetDensity& target, const DsbGsConfig& config, Rng& rng,
                      const GsRoundObserver& observer = {});

/// Backward rollout of the composed drift from N(0, I).
PathBatch sample_dsb_gs_paths(const GsIpfState& state, int n, Rng& rng);
Matrix sample_dsb_gs(const GsIpfState& state, int n, Rng& rng);

}  // namespace diffbridge
