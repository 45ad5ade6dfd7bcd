#include "pipelines.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "diffbridge/ddgs.hpp"
#include "diffbridge/ddps.hpp"
#include "diffbridge/dsb_gs.hpp"
#include "diffbridge/dsb_ps.hpp"
#include "diffbridge/errors.hpp"
#include "diffbridge/network.hpp"
#include "diffbridge/oracle_grid.hpp"

namespace diffbridge::cli {

namespace fs = std::filesystem;

namespace {

// Diagnostic draws use their own stream so they never perturb the reported samples.
constexpr std::uint64_t kDiagnosticSalt = 0x9e3779b97f4a7c15ULL;
constexpr int kDiagnosticDraws = 2000;

std::vector<double> to_std(const Eigen::RowVectorXd& v) { return {v.data(), v.data() + v.size()}; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void add_round_diagnostics(MetricsRecord& m, const ReferenceDescription& ref, const Matrix& draws) {
  const MetricsRecord r = eval_metrics(draws, ref);
  for (const char* key : {"mean_error", "covariance_error", "ks_max"}) {
    auto it = r.scalars.find(key);
    if (it != r.scalars.end()) m.series[std::string("round_") + key].push_back(it->second);
  }
}

Matrix component_centers(const TargetDensity& target) {
  Matrix c(target.dim, static_cast<Eigen::Index>(target.components.size()));
  for (std::size_t i = 0; i < target.components.size(); ++i) c.col(static_cast<Eigen::Index>(i)) = target.components[i].mean();
  return c;
}

void add_mode_weights(MetricsRecord& m, const TargetDensity& target, const Matrix& samples) {
  if (target.components.size() < 2) return;
  const std::vector<double> frac = mode_fractions(samples, component_centers(target));
  m.series["mode_weights"] = frac;
  double worst = 0.0;
  for (std::size_t i = 0; i < frac.size(); ++i) worst = std::max(worst, std::abs(frac[i] - target.weights[i]));
  m.scalars["mode_weight_error"] = worst;
}

void add_flow_log_z(MetricsRecord& m, const TargetDensity& target, const CorrectionSum& drift, const Mlp* u,
                    const ExperimentConfig& cfg, const Matrix& samples, Rng& rng) {
  TrainingConfig tc = cfg.training_config();
  tc.iterations = cfg.ipf.score_iterations;
  tc.batch_size = cfg.ipf.score_batch;
  std::vector<double> trace;
  const MarginalScore score = fit_backward_marginal_score(drift, u, target.dim, cfg.grid(), tc, rng, trace);
  const BatchField correction = [&](double t, const Matrix& x) -> Matrix {
    Matrix c = drift.evaluate(t, x);
    if (u != nullptr) c += u->evaluate(t, x);
    return c;
  };
  const BatchField s = [&](double t, const Matrix& x) -> Matrix { return score.evaluate(t, x); };
  const Matrix points = samples.leftCols(std::min<Eigen::Index>(cfg.flow_points, samples.cols()));
  const Eigen::RowVectorXd est = target.log_gamma_batch(points) - flow_log_density(correction, s, cfg.grid(), points);
  m.scalars["log_z_flow"] = est.mean();
  m.scalars["log_z_flow_spread"] = est.maxCoeff() - est.minCoeff();
  m.series["log_z_flow_pointwise"] = to_std(est);
  m.series["flow_score_loss"] = trace;
}

}  // namespace

fs::path resolve_output(const fs::path& output) {
  if (output.is_absolute()) return output;
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') return fs::path(root) / output;
  return output;
}

void write_samples_csv(const fs::path& path, const Matrix& samples, const std::optional<Eigen::RowVectorXd>& log_weights) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (f == nullptr) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index i = 0; i < samples.rows(); ++i) std::fprintf(f, i ? ",dim_%ld" : "dim_%ld", static_cast<long>(i));
  if (log_weights) std::fprintf(f, ",log_weight");
  std::fputc('\n', f);
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    for (Eigen::Index i = 0; i < samples.rows(); ++i) std::fprintf(f, i ? ",%.17g" : "%.17g", samples(i, j));
    if (log_weights) std::fprintf(f, ",%.17g", (*log_weights)(j));
    std::fputc('\n', f);
  }
  std::fclose(f);
}

CsvSamples read_samples_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DomainError("samples CSV is empty");
  int dims = 0;
  bool weighted = false;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (col == "log_weight") weighted = true;
      else if (col.rfind("dim_", 0) == 0) ++dims;
      else throw DomainError("unexpected CSV column '" + col + "'");
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
    if (static_cast<int>(r.size()) != dims + (weighted ? 1 : 0)) throw DomainError("ragged samples CSV row");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DomainError("samples CSV has no rows");
  CsvSamples out{Matrix(dims, static_cast<Eigen::Index>(rows.size())), std::nullopt};
  if (weighted) out.log_weights = Eigen::RowVectorXd(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (int i = 0; i < dims; ++i) out.samples(i, static_cast<Eigen::Index>(j)) = rows[j][static_cast<std::size_t>(i)];
    if (weighted) (*out.log_weights)(static_cast<Eigen::Index>(j)) = rows[j].back();
  }
  return out;
}

ReferenceDescription reference_for(const ExperimentConfig& cfg) {
  ReferenceDescription ref;
  if (cfg.algorithm == Algorithm::ddps || cfg.algorithm == Algorithm::dsb_ps) {
    const JointModel model = make_model(cfg.model);
    if (!model.analytic_posterior) return ref;
    const GaussianParams post = model.analytic_posterior(cfg.observation());
    ref.mean = post.mean();
    ref.covariance = post.covariance();
    ref.marginal_cdf = [post](int i, double x) {
      return standard_normal_cdf((x - post.mean()(i)) / std::sqrt(post.covariance()(i, i)));
    };
  } else if (cfg.algorithm == Algorithm::ddgs || cfg.algorithm == Algorithm::dsb_gs) {
    const TargetDensity target = make_target(cfg.target);
    ref.mean = target.mean;
    ref.covariance = target.covariance;
    ref.marginal_cdf = target.marginal_cdf;
  }
  return ref;
}

MetricsRecord run_pipeline(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(out_dir / "checkpoints");
  write_text(out_dir / "config.ini", cfg.to_ini());

  Rng rng(cfg.seed);
  Rng diag(cfg.seed ^ kDiagnosticSalt);
  const ReferenceDescription ref = reference_for(cfg);
  MetricsRecord m;
  Matrix samples;
  std::optional<Eigen::RowVectorXd> log_weights;

  switch (cfg.algorithm) {
    case Algorithm::ddps: {
      const JointModel model = make_model(cfg.model);
      const TrainedPosteriorSampler s = train_ddps(model, cfg.ddps(), rng);
      save_checkpoint(s.score, out_dir / "checkpoints" / "score.bin", "ddps conditional score");
      samples = sample_posterior(s, cfg.observation(), cfg.samples, rng);
      m.series["loss_trace"] = s.loss_trace;
      break;
    }
    case Algorithm::dsb_ps: {
      const JointModel model = make_model(cfg.model);
      auto observer = [&](const IpfState& st) {
        const HalfStepRecord& h = st.history.back();
        const bool backward = h.direction == Direction::backward;
        const std::string name = "round" + std::to_string(h.round) + (backward ? "_backward.bin" : "_forward.bin");
        save_checkpoint(backward ? *st.backward : *st.forward, out_dir / "checkpoints" / name,
                        backward ? "dsb-ps backward drift" : "dsb-ps forward drift");
        m.series["half_step_final_loss"].push_back(h.final_loss);
        if (backward) add_round_diagnostics(m, ref, sample_dsb_posterior(st, cfg.observation(), kDiagnosticDraws, diag));
      };
      const IpfState st = run_dsb_ps(model, cfg.dsb_ps(), rng, observer);
      m.series["terminal_ks"] = st.terminal_ks;
      samples = sample_dsb_posterior(st, cfg.observation(), cfg.samples, rng);
      break;
    }
    case Algorithm::ddgs: {
      const TargetDensity target = make_target(cfg.target);
      const HTransformSampler s = train_ddgs(target, cfg.ddgs(), rng);
      save_checkpoint(s.correction, out_dir / "checkpoints" / "correction.bin", "ddgs drift correction");
      const WeightedSamples ws = sample_ddgs(s, cfg.samples, rng);
      samples = ws.samples;
      log_weights = ws.log_weights;
      const double log_z = log_mean_exp(ws.log_weights);
      const Eigen::ArrayXd w = (ws.log_weights.array() - log_z).exp();
      m.scalars["log_z_is"] = log_z;
      m.scalars["z_is_relative_se"] = std::sqrt((w - 1.0).square().sum() / (w.size() - 1.0) / w.size());
      m.series["loss_trace"] = s.loss_trace;
      if (target.known_log_Z) m.scalars["known_log_z"] = *target.known_log_Z;
      add_mode_weights(m, target, samples);
      add_flow_log_z(m, target, CorrectionSum{}, &s.correction, cfg, samples, rng);
      break;
    }
    case Algorithm::dsb_gs: {
      const TargetDensity target = make_target(cfg.target);
      auto observer = [&](const GsIpfState& st) {
        const int r = st.round - 1;
        for (std::size_t i = 0; i < st.drift.networks.size(); ++i)
          save_checkpoint(st.drift.networks[i],
                          out_dir / "checkpoints" / ("round" + std::to_string(r) + "_drift" + std::to_string(i) + ".bin"),
                          "dsb-gs drift correction");
        if (st.score.net)
          save_checkpoint(*st.score.net, out_dir / "checkpoints" / ("round" + std::to_string(r) + "_score.bin"),
                          "dsb-gs marginal score");
        const Matrix draws = sample_dsb_gs(st, kDiagnosticDraws, diag);
        add_round_diagnostics(m, ref, draws);
        if (target.components.size() >= 2) {
          const auto frac = mode_fractions(draws, component_centers(target));
          m.series["round_mode_weight_0"].push_back(frac.front());
        }
        const GsRoundRecord& rec = st.history.back();
        if (!rec.correction_trace.empty()) m.series["round_correction_loss"].push_back(rec.correction_trace.back());
        if (std::isfinite(rec.distill_error)) m.series["distill_error"].push_back(rec.distill_error);
      };
      const GsIpfState st = run_dsb_gs(target, cfg.dsb_gs(), rng, observer);
      samples = sample_dsb_gs(st, cfg.samples, rng);
      if (target.known_log_Z) m.scalars["known_log_z"] = *target.known_log_Z;
      add_mode_weights(m, target, samples);
      add_flow_log_z(m, target, st.drift, nullptr, cfg, samples, rng);
      break;
    }
    case Algorithm::verify:
      throw UnsupportedError("verify has no sampling pipeline");
  }

  const MetricsRecord base = eval_metrics(samples, ref, log_weights);
  m.scalars.insert(base.scalars.begin(), base.scalars.end());
  m.series.insert(base.series.begin(), base.series.end());
  m.labels["algorithm"] = to_string(cfg.algorithm);
  m.labels["seed"] = std::to_string(cfg.seed);
  m.scalars["wall_clock_seconds"] = seconds_since(t0);
  write_samples_csv(out_dir / "samples.csv", samples, log_weights);
  m.validate();
  write_text(out_dir / "metrics.json", m.to_json() + "\n");
  return m;
}

MetricsRecord run_verify(bool& passed) {
  using namespace grid;
  const auto t0 = std::chrono::steady_clock::now();
  MetricsRecord m;
  passed = true;
  auto check = [&](const std::string& name, double value, double threshold) {
    m.scalars[name] = value;
    m.scalars[name + "_threshold"] = threshold;
    if (!(value < threshold)) {
      passed = false;
      m.labels[name] = "fail";
    }
  };

  double ou_res = 0.0;
  for (double t = 1e-3; t <= 50.0; t *= 1.25) {
    const auto a = ou_moments(t);
    ou_res = std::max(ou_res, std::abs(a.alpha * a.alpha + a.variance - 1.0));
    for (double s : {1e-3, 0.1, 1.0, 7.0}) {
      const auto b = ou_moments(s), ab = ou_moments(s + t);
      ou_res = std::max({ou_res, std::abs(a.alpha * b.alpha - ab.alpha),
                         std::abs(b.alpha * b.alpha * a.variance + b.variance - ab.variance)});
    }
  }
  check("ou_identity_residual", ou_res, 1e-12);

  const Lattice line = Lattice::line(400, -8.0, 8.0);
  const GridMeasure nu0 = GridMeasure::from_log_density(line, [](const Vector& x) {
    return std::log(0.3 * std::exp(-2.0 * (x(0) - 2.0) * (x(0) - 2.0)) + 0.7 * std::exp(-2.0 * (x(0) + 2.0) * (x(0) + 2.0)));
  });
  const GridMeasure nuT = GridMeasure::from_log_density(line, [](const Vector& x) { return -0.5 * x(0) * x(0); });
  double sinkhorn_res = 0.0, kernel_res = 0.0;
  std::vector<double> costs;
  bool monotone = true;
  for (double T : {4.0, 2.0, 1.0, 0.5, 0.25}) {
    const GridKernel k = discretize_ou_kernel(line, T);
    kernel_res = std::max(kernel_res, (k.transition.rowwise().sum().array() - 1.0).abs().maxCoeff());
    const SinkhornResult r = sinkhorn_static_sb(k, nu0, nuT, 1e-12, 200000);
    sinkhorn_res = std::max(sinkhorn_res, r.marginal_residual);
    double cost = 0.0;
    for (int i = 0; i < line.size(); ++i)
      for (int j = 0; j < line.size(); ++j) {
        const double d = line.point(j)(0) - line.point(i)(0);
        cost += r.coupling(i, j) * d * d;
      }
    if (!costs.empty() && !(cost < costs.back())) monotone = false;
    costs.push_back(cost);
  }
  check("kernel_row_sum_residual", kernel_res, 1e-12);
  check("sinkhorn_marginal_residual", sinkhorn_res, 1e-10);
  m.series["entropic_cost"] = costs;
  check("entropic_cost_not_monotone", monotone ? 0.0 : 1.0, 0.5);

  const Lattice small = Lattice::line(200, -8.0, 8.0);
  const GridMeasure p = GridMeasure::from_log_density(small, [](const Vector& x) { return -0.25 * x(0) * x(0); });
  const GridMeasure normal = GridMeasure::from_log_density(small, [](const Vector& x) { return -0.5 * x(0) * x(0); });
  GridPathLaw ref{normal.prob, std::vector<Matrix>(16, discretize_ou_kernel(small, 1.0 / 16).transition)};
  double h_res = 0.0;
  const GridIpfResult ipf = grid_ipf_path_marginals(ref, p.prob, normal.prob, 1e-11, 400, FirstProjection::initial,
                                                    [&](int n, const GridPathLaw& law) {
                                                      if (n % 2 == 0)
                                                        h_res = std::max(h_res, verify_h_identity(law, p.prob).max_residual);
                                                    });
  check("h_identity_residual", h_res, 1e-10);
  check("ipf_marginal_residual", ipf.marginal_residual, 1e-10);
  bool kl_monotone = true;
  for (std::size_t i = 1; i < ipf.successive_kl.size(); ++i)
    if (ipf.successive_kl[i] > 1e-13 && ipf.successive_kl[i] > ipf.successive_kl[i - 1]) kl_monotone = false;
  m.series["ipf_successive_kl"] = ipf.successive_kl;
  check("ipf_kl_not_monotone", kl_monotone ? 0.0 : 1.0, 0.5);

  m.labels["algorithm"] = "verify";
  m.labels["status"] = passed ? "pass" : "fail";
  m.scalars["wall_clock_seconds"] = seconds_since(t0);
  return m;
}

MetricsRecord evaluate_csv(const ExperimentConfig& cfg, const fs::path& csv) {
  const CsvSamples s = read_samples_csv(csv);
  MetricsRecord m = eval_metrics(s.samples, reference_for(cfg), s.log_weights);
  m.labels["algorithm"] = to_string(cfg.algorithm);
  m.labels["samples"] = csv.string();
  return m;
}

}  // namespace diffbridge::cli
