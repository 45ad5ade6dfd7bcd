#include "diffbridge/oracle_grid.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "diffbridge/errors.hpp"
#include "diffbridge/sde.hpp"

namespace diffbridge::grid {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(const Eigen::ArrayXd& a) {
  const double mx = a.maxCoeff();
  if (!std::isfinite(mx)) return kNegInf;
  return mx + std::log((a - mx).exp().sum());
}

void require_same_size(const Vector& a, int m, const char* what) {
  if (a.size() != m) {
    std::ostringstream os;
    os << what << " has " << a.size() << " entries, lattice has " << m;
    throw DimensionError(os.str());
  }
}

Matrix row_normalized_gaussian(const Lattice& lattice, double contraction, double variance) {
  const int m = lattice.size();
  const Matrix& x = lattice.coords();
  Matrix logk(m, m);
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd mean = contraction * x.col(i);
    for (int j = 0; j < m; ++j) logk(i, j) = -(x.col(j) - mean).squaredNorm() / (2.0 * variance);
  }
  Matrix k(m, m);
  for (int i = 0; i < m; ++i) {
    const double lse = log_sum_exp(logk.row(i).transpose().array());
    k.row(i) = (logk.row(i).array() - lse).exp();
  }
  return k;
}

}  // namespace

Lattice::Lattice(int dim, int per_axis, double lo, double hi)
    : dim_(dim), per_axis_(per_axis), lo_(lo), hi_(hi) {
  if (per_axis < 2) throw DomainError("lattice needs at least 2 points per axis");
  if (!(hi > lo)) throw DomainError("lattice bounds must satisfy lo < hi");
  spacing_ = (hi - lo) / (per_axis - 1);
  const int m = dim == 1 ? per_axis : per_axis * per_axis;
  coords_.resize(dim, m);
  for (int idx = 0; idx < m; ++idx) {
    if (dim == 1) {
      coords_(0, idx) = lo + spacing_ * idx;
    } else {
      coords_(0, idx) = lo + spacing_ * (idx / per_axis);
      coords_(1, idx) = lo + spacing_ * (idx % per_axis);
    }
  }
}

Lattice Lattice::line(int points, double lo, double hi) { return Lattice(1, points, lo, hi); }
Lattice Lattice::square(int points_per_axis, double lo, double hi) { return Lattice(2, points_per_axis, lo, hi); }

int Lattice::reflect(int i) const {
  if (dim_ == 1) return per_axis_ - 1 - i;
  return (per_axis_ - 1 - i / per_axis_) * per_axis_ + (per_axis_ - 1 - i % per_axis_);
}

GridMeasure GridMeasure::from_log_density(const Lattice& lattice,
                                          const std::function<double(const Eigen::VectorXd&)>& log_density) {
  Eigen::ArrayXd logp(lattice.size());
  for (int i = 0; i < lattice.size(); ++i) logp(i) = log_density(lattice.point(i));
  const double lse = log_sum_exp(logp);
  if (!std::isfinite(lse)) throw DomainError("log-density has no finite mass on the lattice");
  return {lattice, (logp - lse).exp().matrix()};
}

double GridMeasure::mean(int axis) const { return lattice.coords().row(axis).dot(prob); }

double GridMeasure::variance(int axis) const {
  const double mu = mean(axis);
  return (lattice.coords().row(axis).array() - mu).square().matrix().dot(prob);
}

GridKernel discretize_ou_kernel(const Lattice& lattice, double t) {
  const OUTransition ou = ou_moments(t);
  std::ostringstream tag;
  tag << "ou(t=" << t << ")";
  return {row_normalized_gaussian(lattice, ou.alpha, ou.variance), tag.str(), t};
}

GridKernel discretize_euler_kernel(const Lattice& lattice, double h) {
  if (!(h > 0.0)) throw DomainError("Euler kernel needs h > 0");
  std::ostringstream tag;
  tag << "euler(h=" << h << ")";
  return {row_normalized_gaussian(lattice, 1.0 - 0.5 * h, h), tag.str(), h};
}

SinkhornResult sinkhorn_static_sb(const GridKernel& kernel, const GridMeasure& nu0, const GridMeasure& nuT,
                                  double tol, int max_iterations) {
  const int m = static_cast<int>(kernel.transition.rows());
  require_same_size(nu0.prob, m, "nu0");
  require_same_size(nuT.prob, m, "nuT");

  const Matrix logk = kernel.transition.array().log().matrix();  // log(0) = -inf
  const Matrix logkt = logk.transpose();
  Eigen::ArrayXd log_nu0 = nu0.prob.array().log();
  Eigen::ArrayXd log_nuT = nuT.prob.array().log();

  Eigen::ArrayXd a = log_nu0;
  Eigen::ArrayXd b = Eigen::ArrayXd::Zero(m);
  for (int j = 0; j < m; ++j)
    if (nuT.prob(j) <= 0.0) b(j) = kNegInf;

  SinkhornResult out;
  double gap = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < max_iterations; ++it) {
    for (int j = 0; j < m; ++j) {
      if (nuT.prob(j) <= 0.0) continue;
      const double lse = log_sum_exp(a + logk.col(j).array());
      b(j) = log_nuT(j) - lse;
    }
    // Columns are exact now; the row gap decides convergence.
    gap = 0.0;
    Eigen::ArrayXd row_lse(m);
    for (int i = 0; i < m; ++i) {
      if (nu0.prob(i) <= 0.0) continue;
      row_lse(i) = log_sum_exp(b + logkt.col(i).array());
      gap += std::abs(std::exp(a(i) + row_lse(i)) - nu0.prob(i));
    }
    if (gap < tol) break;
    for (int i = 0; i < m; ++i)
      if (nu0.prob(i) > 0.0) a(i) = log_nu0(i) - row_lse(i);
  }
  if (!(gap < tol)) {
    std::ostringstream os;
    os << "Sinkhorn did not converge after " << max_iterations << " iterations, marginal gap " << gap;
    throw ConvergenceError(os.str());
  }

  out.coupling.resize(m, m);
  for (int j = 0; j < m; ++j) out.coupling.col(j) = (a + logk.col(j).array() + b(j)).exp().matrix();
  for (int i = 0; i < m; ++i)
    if (nu0.prob(i) <= 0.0) out.coupling.row(i).setZero();
  out.log_u = (a - log_nu0).matrix();
  out.log_v = b.matrix();
  out.iterations = it + 1;
  const double row_res = (out.coupling.rowwise().sum() - nu0.prob).cwiseAbs().maxCoeff();
  const double col_res = (out.coupling.colwise().sum().transpose() - nuT.prob).cwiseAbs().maxCoeff();
  out.marginal_residual = std::max(row_res, col_res);
  return out;
}

std::vector<Vector> GridPathLaw::marginals() const {
  std::vector<Vector> out;
  out.reserve(kernels.size() + 1);
  out.push_back(initial);
  for (const Matrix& k : kernels) out.push_back(k.transpose() * out.back());
  return out;
}

Matrix GridPathLaw::endpoint_coupling() const {
  Matrix j = initial.asDiagonal();
  for (const Matrix& k : kernels) j = j * k;
  return j;
}

GridPathLaw GridPathLaw::with_initial(const Vector& nu0) const {
  require_same_size(nu0, static_cast<int>(initial.size()), "initial law");
  return {nu0, kernels};
}

GridPathLaw GridPathLaw::with_terminal(const Vector& nuT) const {
  const int m = static_cast<int>(initial.size());
  require_same_size(nuT, m, "terminal law");
  const std::vector<Vector> p = marginals();
  const std::size_t steps = kernels.size();

  // h_K = nuT / p_K, h_k = K_k h_{k+1}; the new chain is the Doob transform of the old one.
  std::vector<Vector> h(steps + 1);
  h[steps] = Vector::Zero(m);
  for (int y = 0; y < m; ++y)
    if (p[steps](y) > 0.0) h[steps](y) = nuT(y) / p[steps](y);
  for (std::size_t k = steps; k-- > 0;) h[k] = kernels[k] * h[k + 1];

  GridPathLaw out;
  out.initial = initial.cwiseProduct(h[0]);
  out.kernels.resize(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    Matrix f = kernels[k] * h[k + 1].asDiagonal();
    for (int x = 0; x < m; ++x) {
      if (h[k](x) > 0.0)
        f.row(x) /= h[k](x);
      else
        f.row(x) = kernels[k].row(x);
    }
    out.kernels[k] = std::move(f);
  }
  return out;
}

double path_kl(const GridPathLaw& a, const GridPathLaw& b) {
  if (a.kernels.size() != b.kernels.size()) throw DimensionError("path_kl: chains have different lengths");
  auto kl_vec = [](const auto& p, const auto& q) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p(i) <= 0.0) continue;
      if (q(i) <= 0.0) return std::numeric_limits<double>::infinity();
      s += p(i) * std::log(p(i) / q(i));
    }
    return s;
  };
  double total = kl_vec(a.initial, b.initial);
  const std::vector<Vector> ma = a.marginals();
  for (std::size_t k = 0; k < a.kernels.size(); ++k) {
    for (Eigen::Index x = 0; x < ma[k].size(); ++x) {
      if (ma[k](x) <= 0.0) continue;
      total += ma[k](x) * kl_vec(a.kernels[k].row(x), b.kernels[k].row(x));
    }
  }
  return total;
}

GridIpfResult grid_ipf_path_marginals(const GridPathLaw& reference, const Vector& nu0, const Vector& nuT, double tol,
                                      int max_projections, FirstProjection first, const IterateObserver& observer) {
  GridPathLaw current =
      first == FirstProjection::initial ? reference.with_terminal(nuT) : reference.with_initial(nu0);
  if (observer) observer(0, current);

  GridIpfResult out;
  bool to_initial = first == FirstProjection::initial;
  double gap = std::numeric_limits<double>::infinity();
  for (int n = 1; n <= max_projections; ++n) {
    GridPathLaw next = to_initial ? current.with_initial(nu0) : current.with_terminal(nuT);
    out.successive_kl.push_back(path_kl(next, current));
    current = std::move(next);
    if (observer) observer(n, current);
    const std::vector<Vector> marg = current.marginals();
    gap = to_initial ? (marg.back() - nuT).lpNorm<1>() : (marg.front() - nu0).lpNorm<1>();
    to_initial = !to_initial;
    if (gap < tol) {
      out.converged = true;
      out.marginals = marg;
      break;
    }
  }
  if (!out.converged) {
    std::ostringstream os;
    os << "grid IPF did not converge after " << max_projections << " projections, marginal gap " << gap;
    throw ConvergenceError(os.str());
  }
  out.marginal_residual = gap;
  out.final_law = std::move(current);
  return out;
}

std::vector<Vector> bridge_marginals(const GridPathLaw& reference, const Vector& log_u, const Vector& log_v) {
  const std::size_t steps = reference.kernels.size();
  std::vector<Vector> fwd(steps + 1), bwd(steps + 1);
  fwd[0] = reference.initial.cwiseProduct(log_u.array().exp().matrix());
  for (std::size_t k = 0; k < steps; ++k) fwd[k + 1] = reference.kernels[k].transpose() * fwd[k];
  bwd[steps] = log_v.array().exp().matrix();
  for (std::size_t k = steps; k-- > 0;) bwd[k] = reference.kernels[k] * bwd[k + 1];
  std::vector<Vector> out(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) {
    out[k] = fwd[k].cwiseProduct(bwd[k]);
    out[k] /= out[k].sum();
  }
  return out;
}

HIdentityCheck verify_h_identity(const GridPathLaw& even_iterate, const Vector& p) {
  constexpr double kMask = 1e-14;
  const int m = static_cast<int>(even_iterate.initial.size());
  require_same_size(p, m, "p");
  const Vector& pi0 = even_iterate.initial;
  const Vector piT = even_iterate.marginals().back();

  HIdentityCheck out;
  out.h0 = Vector::Zero(m);
  for (int i = 0; i < m; ++i)
    if (pi0(i) >= kMask) out.h0(i) = p(i) / pi0(i);

  // Reversed chain: q(x0 | xT) = Pi(x0, xT) / Pi_T(xT).
  const Matrix joint = even_iterate.endpoint_coupling();
  out.hT = Vector::Zero(m);
  for (int j = 0; j < m; ++j)
    if (piT(j) > 0.0) out.hT(j) = joint.col(j).dot(out.h0) / piT(j);

  const Matrix projected = even_iterate.with_initial(p).with_terminal(piT).endpoint_coupling();
  double residual = 0.0;
  for (int j = 0; j < m; ++j) {
    if (out.hT(j) <= 0.0) continue;
    for (int i = 0; i < m; ++i) {
      if (pi0(i) < kMask) continue;
      const double rhs = out.h0(i) / out.hT(j) * joint(i, j);
      residual = std::max(residual, std::abs(projected(i, j) - rhs));
    }
  }
  out.max_residual = residual;
  return out;
}

Vector coarsen(const Vector& prob, int factor) {
  if (factor < 1 || prob.size() % factor != 0) throw DimensionError("coarsen: factor must divide the lattice size");
  const Eigen::Index bins = prob.size() / factor;
  Vector out(bins);
  for (Eigen::Index b = 0; b < bins; ++b) out(b) = prob.segment(b * factor, factor).sum();
  return out;
}

}  // namespace diffbridge::grid
