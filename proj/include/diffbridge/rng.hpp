#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace diffbridge {

/// Seedable, splittable randomness handle. Every stochastic operation takes
/// one explicitly; two handles with the same seed produce identical streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Derives an independent child stream; advances this stream by one draw.
  Rng split();

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() { return engine_(); }

  /// rows x cols matrix of independent standard normals, filled column-major.
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace diffbridge
