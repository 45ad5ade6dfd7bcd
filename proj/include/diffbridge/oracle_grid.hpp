#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace diffbridge::grid {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Uniform 1-d line or 2-d square lattice; points are enumerated row-major in 2-d.
class Lattice {
 public:
  static Lattice line(int points, double lo, double hi);
  static Lattice square(int points_per_axis, double lo, double hi);

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(coords_.cols()); }
  int points_per_axis() const { return per_axis_; }
  double spacing() const { return spacing_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  Eigen::VectorXd point(int i) const { return coords_.col(i); }
  const Matrix& coords() const { return coords_; }
  /// Index of the lattice point reflected through the origin.
  int reflect(int i) const;

 private:
  Lattice(int dim, int per_axis, double lo, double hi);
  int dim_, per_axis_;
  double lo_, hi_, spacing_;
  Matrix coords_;
};

struct GridMeasure {
  Lattice lattice;
  Vector prob;

  /// Normalized evaluations of a (possibly unnormalized) log-density at the lattice points.
  static GridMeasure from_log_density(const Lattice& lattice, const std::function<double(const Eigen::VectorXd&)>& log_density);
  double mean(int axis = 0) const;
  double variance(int axis = 0) const;
};

struct GridKernel {
  Matrix transition;  ///< row-stochastic, m x m
  std::string provenance;
  double elapsed = 0.0;
};

/// Entries proportional to N(x_j; alpha(t) x_i, v(t) I), row-normalized.
GridKernel discretize_ou_kernel(const Lattice& lattice, double t);
/// Entries proportional to the Euler step N(x_j; (1 - h/2) x_i, h I), row-normalized.
GridKernel discretize_euler_kernel(const Lattice& lattice, double h);

struct SinkhornResult {
  Matrix coupling;
  Vector log_u;  ///< row potential
  Vector log_v;  ///< column potential
  int iterations = 0;
  double marginal_residual = 0.0;
};

/// Log-domain Sinkhorn scaling of diag(nu0) K to marginals (nu0, nuT). Zero-mass
/// lattice points of either marginal are masked out.
SinkhornResult sinkhorn_static_sb(const GridKernel& kernel, const GridMeasure& nu0, const GridMeasure& nuT,
                                  double tol = 1e-12, int max_iterations = 100000);

/// Markov chain on the lattice: initial law and one forward kernel per grid step.
struct GridPathLaw {
  Vector initial;
  std::vector<Matrix> kernels;

  std::vector<Vector> marginals() const;
  /// Joint law of (X_0, X_K), m x m.
  Matrix endpoint_coupling() const;
  /// Same law with initial marginal replaced.
  GridPathLaw with_initial(const Vector& nu0) const;
  /// Same law with terminal marginal replaced, keeping the backward conditionals.
  GridPathLaw with_terminal(const Vector& nuT) const;
};

/// KL(a | b) between two chains on the same lattice and grid.
double path_kl(const GridPathLaw& a, const GridPathLaw& b);

enum class FirstProjection {
  /// Pi^1 matches nu0 at time 0 (general sampling bridge).
  initial,
  /// Pi^1 matches nuT at time T (posterior sampling bridge).
  terminal,
};

struct GridIpfResult {
  GridPathLaw final_law;
  /// KL(Pi^{n+1} | Pi^n) for each projection.
  std::vector<double> successive_kl;
  /// Per-time marginals of the last iterate.
  std::vector<Vector> marginals;
  double marginal_residual = 0.0;
  bool converged = false;
};

/// Called with (n, Pi^n) for every iterate, Pi^0 included.
using IterateObserver = std::function<void(int, const GridPathLaw&)>;

/// Exact IPF on the discretized path space. Pi^0 is the reference chain pinned to nuT at
/// time T (FirstProjection::initial) or to nu0 at time 0 (FirstProjection::terminal).
/// Stops once both endpoint marginals match within tol (L1); throws ConvergenceError
/// after max_projections.
GridIpfResult grid_ipf_path_marginals(const GridPathLaw& reference, const Vector& nu0, const Vector& nuT, double tol,
                                      int max_projections, FirstProjection first = FirstProjection::initial,
                                      const IterateObserver& observer = {});

/// Marginals of the static bridge pi = diag(e^u) R diag(e^v) for R = (ref.initial, ref.kernels),
/// interpolated with the reference bridges.
std::vector<Vector> bridge_marginals(const GridPathLaw& reference, const Vector& log_u, const Vector& log_v);

struct HIdentityCheck {
  double max_residual;
  Vector h0;  ///< Phi = p / Pi_0
  Vector hT;
};

/// Residual of Pi^{2n+2}(x0, xT) = h0(x0) / hT(xT) Pi^{2n}(x0, xT), where the left side comes
/// from projecting Pi^{2n} onto p at time 0 and back onto its own terminal law at time T,
/// and hT(xT) = sum_x0 h0(x0) q(x0 | xT) uses the reversed chain. Endpoint pairs with
/// Pi_0^{2n} < 1e-14 are skipped.
HIdentityCheck verify_h_identity(const GridPathLaw& even_iterate, const Vector& p);

/// Aggregates lattice probabilities into contiguous bins of `factor` points (1-d).
Vector coarsen(const Vector& prob, int factor);

}  // namespace diffbridge::grid
