// Acceptance suite: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diffbridge/config.hpp"
#include "diffbridge/ddgs.hpp"
#include "diffbridge/ddps.hpp"
#include "diffbridge/dsb_gs.hpp"
#include "diffbridge/dsb_ps.hpp"
#include "diffbridge/errors.hpp"
#include "diffbridge/metrics.hpp"
#include "diffbridge/oracle_grid.hpp"
#include "pipelines.hpp"

using namespace diffbridge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [miss]");
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vector v1(double a) { return Vector::Constant(1, a); }

double sample_var(const Eigen::RowVectorXd& x) {
  const double m = x.mean();
  return (x.array() - m).square().sum() / static_cast<double>(x.size() - 1);
}

double fd_relative_error(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& at,
                         const Eigen::VectorXd& analytic) {
  Eigen::VectorXd fd(at.size()), p = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(at(i)));
    p(i) = at(i) + h;
    const double up = f(p);
    p(i) = at(i) - h;
    const double dn = f(p);
    p(i) = at(i);
    fd(i) = (up - dn) / (2 * h);
  }
  return (analytic - fd).norm() / std::max(fd.norm(), 1e-8);
}

// ---------------------------------------------------------------- 1
void ou_analytics(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  double ident = 0.0, closed = 0.0, ck = 0.0;
  std::vector<double> ts;
  for (int i = 0; i <= 200; ++i) ts.push_back(1e-3 * std::pow(5e4, i / 200.0));
  for (double t : ts) {
    const OUTransition m = ou_moments(t);
    ident = std::max(ident, std::abs(m.alpha * m.alpha + m.variance - 1.0));
    closed = std::max({closed, std::abs(m.alpha - std::exp(-0.5 * t)), std::abs(m.variance + std::expm1(-t))});
    for (double s : {1e-3, 0.05, 0.9, 4.0, 20.0}) {
      // Chapman-Kolmogorov for Gaussian transitions: alpha(t+s) = alpha(t) alpha(s),
      // v(t+s) = alpha(s)^2 v(t) + v(s).
      const OUTransition a = ou_moments(s), b = ou_moments(t + s);
      ck = std::max({ck, std::abs(m.alpha * a.alpha - b.alpha), std::abs(a.alpha * a.alpha * m.variance + a.variance - b.variance)});
    }
  }
  double fd_err = 0.0;
  const Vector x0 = (Vector(2) << 0.7, -1.2).finished();
  for (double t : {1e-3, 0.3, 2.0, 50.0}) {
    const Vector xt = (Vector(2) << 0.5 * std::exp(-t / 2) + 0.1, 0.4).finished();
    const double a = std::exp(-t / 2), v = -std::expm1(-t);
    auto logp = [&](const Vector& x) { return -(x - a * x0).squaredNorm() / (2 * v); };
    const Vector s = ou_transition_score(x0, xt, t);
    for (int i = 0; i < 2; ++i) {
      const double h = 1e-6 * std::sqrt(v);
      Vector up = xt, dn = xt;
      up(i) += h;
      dn(i) -= h;
      const double fd = (logp(up) - logp(dn)) / (2 * h);
      fd_err = std::max(fd_err, std::abs(s(i) - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  const double secs = seconds_since(t0);
  o.require(ident < 1e-12, "alpha^2+v-1 " + fmt(ident) + " < 1e-12");
  o.require(ck < 1e-12, "Chapman-Kolmogorov " + fmt(ck) + " < 1e-12");
  o.require(closed < 1e-12, "closed form " + fmt(closed));
  o.require(fd_err < 1e-6, "score vs FD " + fmt(fd_err) + " < 1e-6");
  o.require(secs < 1.0, "runtime " + fmt(secs) + " s < 1 s");
}

// ---------------------------------------------------------------- 2
void simulation_fidelity(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = 100000;
  const TimeGrid grid = TimeGrid::uniform(1.0, 64);
  const DriftFunction ou = [](double, const Vector& x) -> Vector { return -0.5 * x; };
  const Vector m0 = (Vector(2) << 1.5, -0.5).finished();
  const double s0sq = 0.5;
  Rng rng(20240);
  // Record every 16th grid time to compare the whole marginal flow.
  const std::vector<int> probes{16, 32, 48, 64};
  std::vector<Matrix> at(probes.size(), Matrix(2, n));
  for (int i = 0; i < n; ++i) {
    const Vector x0 = m0 + std::sqrt(s0sq) * rng.normal_matrix(2, 1).col(0);
    const Path p = euler_maruyama(ou, grid, x0, rng);
    for (std::size_t k = 0; k < probes.size(); ++k) at[k].col(i) = p.states.col(probes[k]);
  }
  double worst = 0.0, lib_gap = 0.0;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const double t = grid.time(probes[k]);
    // N(alpha m0, alpha^2 s0^2 + 1 - alpha^2) computed here in closed form.
    const double a = std::exp(-t / 2), var = a * a * s0sq + 1 - a * a;
    for (int d = 0; d < 2; ++d) {
      const Eigen::RowVectorXd x = at[k].row(d);
      const double z_mean = std::abs(x.mean() - a * m0(d)) / std::sqrt(var / n);
      const double z_var = std::abs(sample_var(x) - var) / (var * std::sqrt(2.0 / (n - 1)));
      worst = std::max({worst, z_mean, z_var});
    }
    const GaussianMarginal g = ou_gaussian_marginal(m0, s0sq, t);
    lib_gap = std::max({lib_gap, std::abs(g.variance - var), (g.mean - a * m0).cwiseAbs().maxCoeff()});
  }
  const double secs = seconds_since(t0);
  o.require(worst < 3.0, "max |error| " + fmt(worst) + " standard errors < 3 (1e5 paths, K=64)");
  o.require(lib_gap < 1e-12, "ou_gaussian_marginal vs closed form " + fmt(lib_gap));
  o.require(secs < 30.0, "runtime " + fmt(secs) + " s < 30 s");
}

// ---------------------------------------------------------------- 3
void probability_flow_check(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const TimeGrid grid = TimeGrid::uniform(5.0, 200);
  const DriftFunction f = [](double, const Vector& x) -> Vector { return -0.5 * x; };
  auto var_t = [](double t) { return 4.0 * std::exp(-t) + 1.0 - std::exp(-t); };
  const DriftFunction score = [&](double t, const Vector& x) -> Vector { return -x / var_t(t); };
  auto log_normal = [](double x, double var) { return -0.5 * x * x / var - 0.5 * std::log(2 * std::numbers::pi * var); };
  double worst = 0.0;
  for (int i = 0; i <= 24; ++i) {
    const double x = -3.0 + 0.25 * i;
    const FlowResult r = probability_flow(f, score, grid, v1(x));
    const double xT = r.path.states(0, r.path.states.cols() - 1);
    const double recon = log_normal(xT, var_t(5.0)) + r.logdet;
    worst = std::max(worst, std::abs(recon - log_normal(x, 4.0)));
  }
  const DriftFunction stat = [](double, const Vector& x) -> Vector { return -x; };
  double stationary = 0.0;
  for (double x : {-3.0, 0.0, 1.7}) stationary = std::max(stationary, std::abs(probability_flow(f, stat, grid, v1(x)).logdet));
  const double secs = seconds_since(t0);
  o.require(worst < 1e-3, "N(0,4) log p0 error " + fmt(worst) + " < 1e-3");
  o.require(stationary < 1e-9, "stationary logdet " + fmt(stationary) + " < 1e-9");
  o.require(secs < 10.0, "runtime " + fmt(secs) + " s < 10 s");
}

// ---------------------------------------------------------------- 4
void ddps_check(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = default_config(Algorithm::ddps);
  const JointModel model = make_model(cfg.model);
  const DdpsConfig dc = cfg.ddps();
  Rng rng(4);
  const TrainedPosteriorSampler s = train_ddps(model, dc, rng);
  const Matrix x = sample_posterior(s, v1(2.0), 10000, rng);
  // s0^2 = s^2 = 1, y = 2: posterior N(1, 1/2).
  const double mean = x.row(0).mean(), var = sample_var(x.row(0));
  // N(1, 1/2) cdf.
  const double ks = ks_statistic(Eigen::RowVectorXd(x.row(0)), [](double v) { return 0.5 * std::erfc(-(v - 1.0)); });
  const double secs = seconds_since(t0);
  o.require(std::abs(mean - 1.0) < 0.1, "mean " + fmt(mean) + " vs 1");
  o.require(std::abs(var - 0.5) < 0.1, "var " + fmt(var) + " vs 0.5");
  o.require(ks < 0.05, "KS " + fmt(ks) + " < 0.05");
  o.require(dc.training.iterations <= 20000, std::to_string(dc.training.iterations) + " steps");
  o.require(secs < 600.0, "runtime " + fmt(secs) + " s");
}

// ---------------------------------------------------------------- 5
double posterior_error(const Matrix& x) { return std::abs(x.row(0).mean() - 1.0) + std::abs(sample_var(x.row(0)) - 0.5); }

void dsb_ps_check(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = default_config(Algorithm::dsb_ps);
  const JointModel model = make_model(cfg.model);
  DsbConfig c = cfg.dsb_ps();
  c.diagnostic_y = v1(2.0);
  // Budget in gradient steps: round 0 plus two half-steps per IPF round.
  const int budget = c.dsm_iterations + 2 * c.rounds * c.training.iterations;

  Rng rng(55);
  const IpfState st = run_dsb_ps(model, c, rng);
  const double err_n = posterior_error(sample_dsb_posterior(st, v1(2.0), 10000, rng));

  DsbConfig c0 = c;
  c0.rounds = 0;
  c0.dsm_iterations = budget;
  Rng rng0(55);
  const IpfState st0 = run_dsb_ps(model, c0, rng0);
  const double err_0 = posterior_error(sample_dsb_posterior(st0, v1(2.0), 10000, rng0));

  const std::vector<double>& ks = st.terminal_ks;
  bool steps_ok = true;
  for (std::size_t i = 1; i < ks.size(); ++i) steps_ok = steps_ok && ks[i] <= 1.1 * ks[i - 1];
  std::string trace;
  for (double k : ks) trace += (trace.empty() ? "" : ",") + fmt(k);
  const double secs = seconds_since(t0);
  o.require(err_n < err_0, "moment error N=" + std::to_string(c.rounds) + " " + fmt(err_n) + " < N=0 " + fmt(err_0) +
                               " at " + std::to_string(budget) + " steps");
  o.require(ks.back() < ks.front() && steps_ok, "terminal KS " + trace);
  o.require(secs < 1800.0, "runtime " + fmt(secs) + " s");
}

// ---------------------------------------------------------------- 6
void ddgs_check(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = default_config(Algorithm::ddgs);
  const DdgsConfig dc = cfg.ddgs();

  // Zero-drift fixed point.
  const TargetDensity normal = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 1.0));
  Rng rng(61);
  const HTransformSampler sn = train_ddgs(normal, dc, rng);
  const PathBatch pn = sample_ddgs_paths(sn, 4000, rng);
  double sq = 0.0;
  for (int j = 0; j < dc.grid.steps(); ++j) sq += sn.correction.evaluate(pn.label(j), pn.states[j]).squaredNorm();
  const double u_l2 = std::sqrt(sq / (4000.0 * dc.grid.steps()));
  o.require(u_l2 < 0.05, "N(0,1): ||u||_L2 " + fmt(u_l2) + " < 0.05");

  // gamma(x) = exp(-x^2/4), Z = sqrt(4 pi).
  const double z_true = std::sqrt(4 * std::numbers::pi);
  const TargetDensity gam = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 2.0), z_true);
  const HTransformSampler sg = train_ddgs(gam, dc, rng);
  const WeightedSamples ws = sample_ddgs(sg, 10000, rng);
  const Eigen::ArrayXd w = ws.log_weights.array().exp();
  const double z_is = w.mean();
  const double se = std::sqrt((w - z_is).square().sum() / (w.size() - 1.0) / w.size());
  o.require(std::abs(z_is - z_true) < 2 * se, "Z_IS " + fmt(z_is) + " vs sqrt(4pi) " + fmt(z_true) + " (2 SE = " + fmt(2 * se) + ")");

  TrainingConfig score_cfg = cfg.training_config();
  score_cfg.iterations = cfg.ipf.score_iterations;
  score_cfg.batch_size = cfg.ipf.score_batch;
  std::vector<double> trace;
  const MarginalScore score = fit_backward_marginal_score(CorrectionSum{}, &sg.correction, 1, dc.grid, score_cfg, rng, trace);
  const BatchField sfield = [&](double t, const Matrix& x) { return score.evaluate(t, x); };
  const FlowLogZ flow = flow_log_z(sg, sfield, ws.samples.leftCols(20));
  const double gap = std::abs(flow.mean - std::log(z_is));
  o.require(gap < 0.1, "flow log Z " + fmt(flow.mean) + " vs IS " + fmt(std::log(z_is)));

  // Reverse-KL loss is bounded by -log Z (up to Monte Carlo error).
  bool bound = true;
  std::string losses;
  for (const HTransformSampler* s : {&sn, &sg}) {
    const NoiseRecord noise = draw_noise(1, 10000, dc.grid.steps(), rng);
    const ControlledLoss l = reverse_kl_loss(s->correction, s->target, dc.grid, noise);
    const double sd = std::sqrt((l.per_path.array() - l.loss).square().sum() / (l.per_path.size() - 1.0));
    const double lower = -*s->target.known_log_Z;
    bound = bound && l.loss >= lower - 3 * sd / std::sqrt(10000.0);
    losses += (losses.empty() ? "" : ", ") + fmt(l.loss) + " >= " + fmt(lower);
  }
  o.require(bound, "reverse KL " + losses);
  const double secs = seconds_since(t0);
  o.require(secs < 900.0, "runtime " + fmt(secs) + " s");
}

// ---------------------------------------------------------------- 7
double histogram_tv(const Eigen::RowVectorXd& x, const Vector& prob400) {
  // 400-point lattice on [-8, 8] with bins of two lattice cells.
  const Vector q = grid::coarsen(prob400, 2);
  const double dx = 16.0 / 399.0, lo = -8.0 - dx / 2;
  Vector h = Vector::Zero(q.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const auto b = static_cast<Eigen::Index>(std::floor((x(i) - lo) / (2 * dx)));
    h(std::clamp<Eigen::Index>(b, 0, q.size() - 1)) += 1.0;
  }
  h /= static_cast<double>(x.size());
  return 0.5 * (h - q).cwiseAbs().sum();
}

void dsb_gs_check(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = default_config(Algorithm::dsb_gs);
  const DsbGsConfig base = cfg.dsb_gs();
  const TargetDensity target = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 2.0));

  // Reduction: one round is the denoising general sampler.
  {
    DsbGsConfig c1 = base;
    c1.rounds = 1;
    Rng a(71), b(71);
    const GsIpfState st = run_dsb_gs(target, c1, a);
    const HTransformSampler s = train_ddgs(target, c1.ddgs(), b);
    const Matrix za = sample_dsb_gs(st, 10000, a);
    const Matrix zb = sample_ddgs(s, 10000, b).samples;
    const bool same = st.drift.networks.size() == 1 &&
                      (st.drift.networks[0].params().array() == s.correction.params().array()).all() &&
                      (za.array() == zb.array()).all();
    o.require(same, std::string("N=1 bit-identical to DDGS: ") + (same ? "yes" : "no"));
  }

  // 2-mode 2-d mixture, N = 3.
  {
    const std::vector<double> w{0.3, 0.7};
    const TargetDensity mix = make_gaussian_mixture(
        w, {GaussianParams::isotropic((Vector(2) << -2.0, 0.0).finished(), 0.5),
            GaussianParams::isotropic((Vector(2) << 2.0, 0.0).finished(), 0.5)});
    Rng rng(72);
    const GsIpfState st = run_dsb_gs(mix, base, rng);
    const Matrix z = sample_dsb_gs(st, 10000, rng);
    const double w0 = (z.row(0).array() < 0.0).cast<double>().mean();
    const double err = std::max(std::abs(w0 - w[0]), std::abs((1 - w0) - w[1]));
    o.require(err < 0.07, "2-d mixture weights (" + fmt(w0) + ", " + fmt(1 - w0) + ") vs (0.3, 0.7), error " + fmt(err) +
                              " < 0.07");
  }

  // 1-d intermediate marginals vs the grid IPF iterate with the same number of rounds.
  {
    Rng rng(73);
    const GsIpfState st = run_dsb_gs(target, base, rng);
    const PathBatch paths = sample_dsb_gs_paths(st, 10000, rng);

    const grid::Lattice lat = grid::Lattice::line(400, -8.0, 8.0);
    const auto p = grid::GridMeasure::from_log_density(lat, [](const Eigen::VectorXd& x) { return -0.25 * x(0) * x(0); });
    const auto n = grid::GridMeasure::from_log_density(lat, [](const Eigen::VectorXd& x) { return -0.5 * x(0) * x(0); });
    const int K = base.grid.steps();
    const grid::GridPathLaw ref{n.prob, std::vector<Matrix>(static_cast<std::size_t>(K),
                                                            grid::discretize_ou_kernel(lat, base.grid.step(1)).transition)};
    // Learned round r samples the backward process of Pi^{2r+2}.
    const int iterate = 2 * base.rounds;
    std::vector<Vector> oracle;
    grid::grid_ipf_path_marginals(ref, p.prob, n.prob, 1e-9, 4000, grid::FirstProjection::initial,
                                  [&](int it, const grid::GridPathLaw& law) {
                                    if (it == iterate) oracle = law.marginals();
                                  });
    double worst = 0.0;
    std::string per_time;
    for (int k : {0, K / 4, K / 2, 3 * K / 4}) {
      const double tv = histogram_tv(paths.states[static_cast<std::size_t>(K - k)].row(0), oracle[static_cast<std::size_t>(k)]);
      worst = std::max(worst, tv);
      per_time += (per_time.empty() ? "" : ",") + fmt(tv);
    }
    o.require(worst < 0.12, "1-d TV vs grid Pi^" + std::to_string(iterate) + " at t=0,T/4,T/2,3T/4: " + per_time + " < 0.12");
  }
  const double secs = seconds_since(t0);
  o.require(secs < 2700.0, "runtime " + fmt(secs) + " s");
}

// ---------------------------------------------------------------- 8
void oracle_check(Outcome& o) {
  using namespace grid;
  const auto t0 = std::chrono::steady_clock::now();
  const Lattice line = Lattice::line(400, -8.0, 8.0);
  auto gauss = [&](const Lattice& l, double m, double v) {
    return GridMeasure::from_log_density(l, [=](const Eigen::VectorXd& x) { return -0.5 * (x(0) - m) * (x(0) - m) / v; });
  };
  const GridMeasure a = gauss(line, 1.0, 0.5), b = gauss(line, 0.0, 1.0);
  double resid = 0.0;
  std::vector<double> costs;
  for (double T : {4.0, 2.0, 1.0, 0.5, 0.25}) {
    const SinkhornResult r = sinkhorn_static_sb(discretize_ou_kernel(line, T), a, b);
    // Residuals recomputed from the coupling itself.
    resid = std::max({resid, (r.coupling.rowwise().sum() - a.prob).cwiseAbs().sum(),
                      (r.coupling.colwise().sum().transpose() - b.prob).cwiseAbs().sum()});
    double cost = 0.0;
    for (int i = 0; i < line.size(); ++i)
      for (int j = 0; j < line.size(); ++j) cost += r.coupling(i, j) * std::pow(line.point(i)(0) - line.point(j)(0), 2);
    costs.push_back(cost);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < costs.size(); ++i) monotone = monotone && costs[i] < costs[i - 1];

  const Lattice small = Lattice::line(200, -8.0, 8.0);
  const GridMeasure p = gauss(small, 0.5, 2.0), n = gauss(small, 0.0, 1.0);
  const GridPathLaw ref{n.prob, std::vector<Matrix>(16, discretize_ou_kernel(small, 1.0 / 16).transition)};
  double h = 0.0;
  int iterates = 0;
  grid_ipf_path_marginals(ref, p.prob, n.prob, 1e-11, 1000, FirstProjection::initial, [&](int it, const GridPathLaw& law) {
    if (it % 2 == 0) {
      h = std::max(h, verify_h_identity(law, p.prob).max_residual);
      ++iterates;
    }
  });
  std::string trace;
  for (double c : costs) trace += (trace.empty() ? "" : ",") + fmt(c);
  const double secs = seconds_since(t0);
  o.require(resid < 1e-10, "Sinkhorn residual " + fmt(resid) + " < 1e-10");
  o.require(h < 1e-10, "h-identity " + fmt(h) + " over " + std::to_string(iterates) + " even iterates < 1e-10");
  o.require(monotone, "entropic cost over T=4..0.25: " + trace);
  o.require(secs < 120.0, "runtime " + fmt(secs) + " s");
}

// ---------------------------------------------------------------- 9
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism_check(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / "diffbridge_acceptance";
  fs::remove_all(root);
  bool identical = true;
  for (Algorithm alg : {Algorithm::ddps, Algorithm::dsb_ps, Algorithm::ddgs, Algorithm::dsb_gs}) {
    ExperimentConfig c = default_config(alg);
    for (const char* kv : {"run.seed=99", "run.samples=500", "grid.K=16", "training.iterations=60", "training.batch_size=64",
                           "ipf.rounds=2", "ipf.dsm_iterations=60", "ipf.cache_paths=256", "ipf.cache_refresh=20",
                           "ipf.score_iterations=60", "ipf.distill_iterations=60", "eval.flow_points=5"})
      apply_override(c, kv);
    const fs::path d1 = root / (to_string(alg) + "_a"), d2 = root / (to_string(alg) + "_b"), d3 = root / (to_string(alg) + "_c");
    cli::run_pipeline(c, d1);
    cli::run_pipeline(c, d2);
    cli::run_pipeline(load_config(d1 / "config.ini"), d3);
    const std::string s1 = slurp(d1 / "samples.csv");
    identical = identical && !s1.empty() && s1 == slurp(d2 / "samples.csv") && s1 == slurp(d3 / "samples.csv");
  }
  fs::remove_all(root);
  o.require(identical, std::string("byte-identical samples for 4 pipelines incl. echoed config: ") + (identical ? "yes" : "no"));

  // Finite-difference checks of every trained loss.
  Rng rng(9);
  TrainingConfig tc{1, 16};
  tc.hidden = {12, 12};
  tc.time_features = 4;
  auto net = [&](int state, int cond) {
    MlpArchitecture a = make_architecture(tc, state, cond, 1.0);
    a.final_layer_scale = 1.0;
    return Mlp(a, rng);
  };
  double worst = 0.0;
  auto check = [&](const Mlp& m, const std::function<double(const Mlp&, Eigen::VectorXd*)>& loss) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(m.num_params());
    loss(m, &g);
    worst = std::max(worst, fd_relative_error([&](const Eigen::VectorXd& p) { return loss(Mlp(m.architecture(), p), nullptr); },
                                              m.params(), g));
  };
  const JointModel model = make_conjugate_linear_gaussian(1.0, 1.0, 2);
  const DsmBatch dsm = draw_dsm_batch(model, 16, 1.0, 1e-3, rng);
  check(net(2, 2), [&](const Mlp& m, Eigen::VectorXd* g) { return dsm_loss(m, dsm, 1.0, 1e-3, g); });

  const TimeGrid grid = TimeGrid::uniform(1.0, 5);
  const TargetDensity mix = make_gaussian_mixture(
      {0.5, 0.5}, {GaussianParams::isotropic(Vector::Constant(2, 1.0), 0.6), GaussianParams::isotropic(Vector::Constant(2, -1.0), 0.6)});
  const NoiseRecord noise = draw_noise(2, 10, 5, rng);
  CorrectionSum frozen;
  frozen.networks.push_back(net(2, 0));
  check(net(2, 0), [&](const Mlp& m, Eigen::VectorXd* g) {
    return controlled_kl_loss(m, frozen, reference_potential(mix), grid, noise, g).loss;
  });
  const PathBatch paths = rollout(nullptr, frozen, grid, noise);
  check(net(2, 0), [&](const Mlp& m, Eigen::VectorXd* g) { return backward_dsm_loss(m, paths, g); });
  const Eigen::RowVectorXd times = Eigen::RowVectorXd::LinSpaced(9, 0.0, 1.0);
  const Matrix xs = rng.normal_matrix(2, 9), ys = rng.normal_matrix(2, 9);
  check(net(2, 0), [&](const Mlp& m, Eigen::VectorXd* g) { return distillation_loss(m, times, xs, ys, g); });
  MeanMatchingBatch mm{times, xs, rng.normal_matrix(2, 9), ys};
  check(net(2, 2), [&](const Mlp& m, Eigen::VectorXd* g) { return mean_matching_loss(m, mm, g); });
  o.require(worst < 1e-4, "max FD relative error over 5 losses " + fmt(worst) + " < 1e-4");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, void (*)(Outcome&)>> criteria{
      {"OU analytics", ou_analytics},
      {"Simulation fidelity", simulation_fidelity},
      {"Probability flow", probability_flow_check},
      {"DDPS conjugate posterior", ddps_check},
      {"DSB-PS short horizon", dsb_ps_check},
      {"DDGS", ddgs_check},
      {"DSB-GS", dsb_gs_check},
      {"Grid oracles", oracle_check},
      {"Determinism and gradients", determinism_check},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %d. %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, seconds_since(t0),
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
