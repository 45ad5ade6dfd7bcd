#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "diffbridge/errors.hpp"
#include "diffbridge/metrics.hpp"
#include "diffbridge/oracle_grid.hpp"
#include "diffbridge/sde.hpp"
#include "pipelines.hpp"

namespace py = pybind11;
using namespace diffbridge;

namespace {

py::object to_python(const MetricsRecord& m) { return py::module_::import("json").attr("loads")(m.to_json()); }

ExperimentConfig make_config(const std::string& algorithm, const std::map<std::string, std::string>& settings,
                             const std::optional<std::string>& config_path) {
  ExperimentConfig cfg = default_config(parse_algorithm(algorithm));
  if (config_path) cfg = load_config(*config_path, cfg);
  for (const auto& [k, v] : settings) apply_override(cfg, k + "=" + v);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion samplers with Schrodinger bridge refinement (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IpfError>(m, "IpfError", PyExc_RuntimeError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

  m.def(
      "config_ini",
      [](const std::string& algorithm, const std::map<std::string, std::string>& settings,
         const std::optional<std::string>& config) { return make_config(algorithm, settings, config).to_ini(); },
      py::arg("algorithm"), py::arg("settings") = std::map<std::string, std::string>{},
      py::arg("config") = std::nullopt, "Resolved configuration as INI text.");

  m.def(
      "run",
      [](const std::string& algorithm, const std::string& output, const std::map<std::string, std::string>& settings,
         const std::optional<std::string>& config) {
        const ExperimentConfig cfg = make_config(algorithm, settings, config);
        MetricsRecord rec;
        {
          py::gil_scoped_release release;
          rec = cli::run_pipeline(cfg, cli::resolve_output(output));
        }
        return to_python(rec);
      },
      py::arg("algorithm"), py::arg("output"), py::arg("settings") = std::map<std::string, std::string>{},
      py::arg("config") = std::nullopt,
      "Train and sample; writes samples.csv, metrics.json, config.ini and checkpoints/ to `output`.");

  m.def(
      "verify",
      []() {
        bool passed = false;
        const MetricsRecord rec = cli::run_verify(passed);
        return py::make_tuple(passed, to_python(rec));
      },
      "Grid oracle residual checks; returns (passed, metrics).");

  m.def(
      "evaluate",
      [](const std::string& algorithm, const std::string& samples_csv,
         const std::map<std::string, std::string>& settings, const std::optional<std::string>& config) {
        return to_python(cli::evaluate_csv(make_config(algorithm, settings, config), samples_csv));
      },
      py::arg("algorithm"), py::arg("samples_csv"), py::arg("settings") = std::map<std::string, std::string>{},
      py::arg("config") = std::nullopt);

  m.def(
      "read_samples",
      [](const std::string& path) {
        const cli::CsvSamples s = cli::read_samples_csv(path);
        // Rows are samples on the Python side.
        Matrix rows = s.samples.transpose();
        return py::make_tuple(rows, s.log_weights ? py::cast(Eigen::VectorXd(s.log_weights->transpose())) : py::none());
      },
      py::arg("path"), "Samples (n x d) and optional log weights from a samples CSV.");

  m.def(
      "ou_moments",
      [](double t) {
        const OUTransition o = ou_moments(t);
        return py::make_tuple(o.alpha, o.variance);
      },
      py::arg("t"), "(alpha, variance) of the OU transition over elapsed time t.");

  m.def(
      "ks_standard_normal", [](const Matrix& rows) { return ks_standard_normal(rows.transpose()); }, py::arg("samples"),
      "Largest per-coordinate KS distance to N(0, 1); samples are n x d.");

  m.def(
      "grid_sinkhorn",
      [](int points, double lo, double hi, double horizon, const Eigen::VectorXd& log_nu0,
         const Eigen::VectorXd& log_nuT) {
        const grid::Lattice line = grid::Lattice::line(points, lo, hi);
        if (log_nu0.size() != points || log_nuT.size() != points)
          throw DimensionError("marginals must have one entry per lattice point");
        auto measure = [&](const Eigen::VectorXd& logp) {
          return grid::GridMeasure::from_log_density(line, [&](const Eigen::VectorXd& x) {
            const int i = static_cast<int>(std::lround((x(0) - lo) / (hi - lo) * (points - 1)));
            return logp(i);
          });
        };
        const grid::SinkhornResult r =
            grid::sinkhorn_static_sb(grid::discretize_ou_kernel(line, horizon), measure(log_nu0), measure(log_nuT));
        return py::make_tuple(r.coupling, r.marginal_residual, r.iterations);
      },
      py::arg("points"), py::arg("lo"), py::arg("hi"), py::arg("horizon"), py::arg("log_nu0"), py::arg("log_nuT"),
      "Static Schrodinger bridge on a 1-d lattice under the OU kernel; returns (coupling, residual, iterations).");
}
