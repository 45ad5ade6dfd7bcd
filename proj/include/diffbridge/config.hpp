#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffbridge/ddgs.hpp"
#include "diffbridge/ddps.hpp"
#include "diffbridge/dsb_gs.hpp"
#include "diffbridge/dsb_ps.hpp"
#include "diffbridge/models.hpp"

namespace diffbridge {

enum class Algorithm { ddps, dsb_ps, ddgs, dsb_gs, verify };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

/// Joint model for the posterior samplers.
struct ModelSpec {
  std::string name = "conjugate";  ///< conjugate | uninformative
  int dim = 1;
  int obs_dim = 1;
  double prior_var = 1.0;
  double obs_var = 1.0;
  std::vector<double> observation{2.0};
};

/// Target for the general samplers.
struct TargetSpec {
  std::string name = "gaussian";  ///< gaussian | mixture | ring | funnel
  int dim = 1;
  std::vector<double> mean{0.0};
  double variance = 1.0;
  /// gamma = scale * N(mean, variance I) for the gaussian target.
  double scale = 1.0;
  /// Mixture: weights and one mean per component (flattened, dim values each).
  std::vector<double> weights{0.5, 0.5};
  std::vector<double> component_means{-2.0, 2.0};
  int modes = 2;
  double radius = 2.0;
  double top_std = 1.0;
};

struct TrainingSpec {
  int iterations = 2000;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double lr_final_factor = 0.1;
  std::vector<int> hidden{64, 64};
  int time_features = 16;
};

struct IpfSpec {
  int rounds = 3;
  int dsm_iterations = 2000;
  int cache_paths = 4096;
  int cache_refresh = 100;
  double ema_decay = 0.0;
  int score_iterations = 6000;
  int score_batch = 128;
  int flow_every = 50;
  int distill_iterations = 4000;
  double distill_tolerance = 1e-3;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::ddgs;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::filesystem::path output = "run";
  int samples = 10000;
  /// Accepted for forward compatibility; runs are single-threaded.
  int workers = 1;
  double horizon = 5.0;
  int steps = 64;
  ModelSpec model;
  TargetSpec target;
  TrainingSpec training;
  IpfSpec ipf;
  /// Probability-flow log-Z evaluation points for the general samplers.
  int flow_points = 10;

  TimeGrid grid() const { return TimeGrid::uniform(horizon, steps); }
  TrainingConfig training_config() const;
  DdpsConfig ddps() const;
  DsbConfig dsb_ps() const;
  DdgsConfig ddgs() const;
  DsbGsConfig dsb_gs() const;
  Vector observation() const;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  /// Canonical INI text; loading it back yields an identical configuration.
  std::string to_ini() const;
};

/// Defaults for an algorithm before any file or override is applied.
ExperimentConfig default_config(Algorithm algorithm);

/// Applies "section.key = value" pairs from an INI file onto `base`.
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base);
ExperimentConfig load_config(const std::filesystem::path& path);
/// One "section.key=value" override; unknown keys are ConfigErrors.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

JointModel make_model(const ModelSpec& spec);
TargetDensity make_target(const TargetSpec& spec);

}  // namespace diffbridge
