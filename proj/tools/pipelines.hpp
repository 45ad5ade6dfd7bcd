#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "diffbridge/config.hpp"
#include "diffbridge/metrics.hpp"

namespace diffbridge::cli {

/// Environment variable naming the root for relative output directories.
inline constexpr const char* kOutputRootEnv = "DIFFBRIDGE_OUTPUT_ROOT";

std::filesystem::path resolve_output(const std::filesystem::path& output);

/// Writes dim_0..dim_{d-1}[,log_weight] with %.17g, one row per column of `samples`.
void write_samples_csv(const std::filesystem::path& path, const Matrix& samples,
                       const std::optional<Eigen::RowVectorXd>& log_weights = std::nullopt);

struct CsvSamples {
  Matrix samples;
  std::optional<Eigen::RowVectorXd> log_weights;
};
CsvSamples read_samples_csv(const std::filesystem::path& path);

/// Runs the configured pipeline into `out_dir` (created if needed) and returns its metrics.
/// Writes samples.csv, metrics.json, config.ini and checkpoints/.
MetricsRecord run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

/// Oracle residual checks on the grid; `passed` is false if any residual misses its threshold.
MetricsRecord run_verify(bool& passed);

/// Metrics of a samples CSV against the analytic reference implied by the config.
MetricsRecord evaluate_csv(const ExperimentConfig& cfg, const std::filesystem::path& csv);

ReferenceDescription reference_for(const ExperimentConfig& cfg);

}  // namespace diffbridge::cli
