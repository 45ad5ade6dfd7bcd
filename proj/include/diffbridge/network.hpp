#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "diffbridge/autodiff.hpp"
#include "diffbridge/rng.hpp"

namespace diffbridge {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct MlpArchitecture {
  int state_dim = 1;
  int cond_dim = 0;
  int output_dim = 1;
  std::vector<int> hidden{64, 64};
  /// Even; half sines, half cosines.
  int time_features = 16;
  /// Time is normalized by this before featurization.
  double horizon = 1.0;
  double final_layer_scale = 1e-2;

  int input_dim() const { return time_features + state_dim + cond_dim; }
  bool operator==(const MlpArchitecture&) const = default;
};

/// Sinusoidal features of t / horizon on a geometric frequency ladder, one column per time.
Matrix time_features(const Eigen::RowVectorXd& times, int count, double horizon);

/// Multilayer perceptron (t, x[, y]) -> R^output_dim with SiLU activations and
/// a flat parameter vector laid out layer by layer as (W column-major, b).
class Mlp {
 public:
  Mlp(MlpArchitecture arch, Rng& init_rng);
  Mlp(MlpArchitecture arch, Vector params);

  const MlpArchitecture& architecture() const { return arch_; }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  Eigen::Index num_params() const { return params_.size(); }

  /// Batch forward pass; x is state_dim x n, y is cond_dim x n (or cond_dim x 1 broadcast).
  Matrix evaluate(const Eigen::RowVectorXd& times, const Matrix& x, const Matrix& y = Matrix()) const;
  Matrix evaluate(double t, const Matrix& x, const Matrix& y = Matrix()) const;
  Vector evaluate(double t, const Vector& x, const Vector& y) const;

  /// Records the forward pass on a tape. Parameter gradients are added into
  /// grad_sink (size num_params()); pass nullptr to treat the network as frozen.
  ad::Var record(ad::Tape& tape, const Eigen::RowVectorXd& times, ad::Var x, const Matrix& y,
                 double* grad_sink) const;

  /// Overwrites with zeros (the zero network).
  void zero();

 private:
  struct Layer {
    Eigen::Index w_offset, b_offset;
    int rows, cols;
  };
  Matrix assemble_input(const Eigen::RowVectorXd& times, const Matrix& x, const Matrix& y) const;

  MlpArchitecture arch_;
  std::vector<Layer> layers_;
  Vector params_;
};

Eigen::RowVectorXd broadcast_time(double t, Eigen::Index n);

/// Flat binary checkpoint with an architecture header, plus `<path>.manifest` text sidecar.
void save_checkpoint(const Mlp& net, const std::filesystem::path& path, const std::string& role = "network");
Mlp load_checkpoint(const std::filesystem::path& path);

}  // namespace diffbridge
