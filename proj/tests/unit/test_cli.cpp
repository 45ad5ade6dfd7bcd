#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "diffbridge/errors.hpp"
#include "pipelines.hpp"

using namespace diffbridge;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("diffbridge_unit_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small(Algorithm a) {
  ExperimentConfig c = default_config(a);
  for (const char* kv : {"run.seed=12", "run.samples=64", "grid.K=6", "training.iterations=8", "training.batch_size=16",
                         "training.hidden=8", "training.time_features=4", "ipf.rounds=2", "ipf.dsm_iterations=8",
                         "ipf.cache_paths=32", "ipf.cache_refresh=4", "ipf.score_iterations=8", "ipf.score_batch=16",
                         "ipf.flow_every=3", "ipf.distill_iterations=8", "eval.flow_points=4"})
    apply_override(c, kv);
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DIFFBRIDGE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("samples CSV round trips bit-exactly") {
  const fs::path dir = scratch("csv");
  fs::create_directories(dir);
  Matrix x(2, 3);
  x << 0.1, -1e-300, 3.0 / 7.0, 1e17, -2.5, std::nextafter(1.0, 2.0);
  const Eigen::RowVectorXd lw = (Eigen::RowVectorXd(3) << -0.5, 0.0, 1.0 / 3.0).finished();
  cli::write_samples_csv(dir / "s.csv", x, lw);
  CHECK(slurp(dir / "s.csv").rfind("dim_0,dim_1,log_weight\n", 0) == 0);
  const cli::CsvSamples back = cli::read_samples_csv(dir / "s.csv");
  CHECK((back.samples.array() == x.array()).all());
  CHECK((back.log_weights->array() == lw.array()).all());
  fs::remove_all(dir);
}

TEST_CASE("every pipeline reproduces its samples byte for byte, including from the echoed config") {
  for (Algorithm a : {Algorithm::ddps, Algorithm::dsb_ps, Algorithm::ddgs, Algorithm::dsb_gs}) {
    CAPTURE(to_string(a));
    const ExperimentConfig c = small(a);
    const fs::path d1 = scratch(to_string(a) + "_1"), d2 = scratch(to_string(a) + "_2"), d3 = scratch(to_string(a) + "_3");
    const MetricsRecord m = cli::run_pipeline(c, d1);
    cli::run_pipeline(c, d2);
    cli::run_pipeline(load_config(d1 / "config.ini"), d3);
    CHECK(slurp(d1 / "samples.csv") == slurp(d2 / "samples.csv"));
    CHECK(slurp(d1 / "samples.csv") == slurp(d3 / "samples.csv"));
    CHECK(fs::exists(d1 / "metrics.json"));
    CHECK(!fs::is_empty(d1 / "checkpoints"));
    CHECK(m.scalars.at("num_samples") == 64.0);
    for (const auto& d : {d1, d2, d3}) fs::remove_all(d);
  }
}

TEST_CASE("relative output directories resolve under the output root") {
  ::setenv(cli::kOutputRootEnv, "/tmp/root_dir", 1);
  CHECK(cli::resolve_output("run1") == fs::path("/tmp/root_dir/run1"));
  CHECK(cli::resolve_output("/abs/run") == fs::path("/abs/run"));
  ::unsetenv(cli::kOutputRootEnv);
  CHECK(cli::resolve_output("run1") == fs::path("run1"));
}

TEST_CASE("eval reproduces the run's metrics from the CSV") {
  const ExperimentConfig c = small(Algorithm::ddgs);
  const fs::path d = scratch("eval");
  const MetricsRecord m = cli::run_pipeline(c, d);
  const MetricsRecord e = cli::evaluate_csv(c, d / "samples.csv");
  CHECK(e.scalars.at("ess") == doctest::Approx(m.scalars.at("ess")).epsilon(1e-12));
  CHECK(e.scalars.at("ks_max") == m.scalars.at("ks_max"));
  fs::remove_all(d);
}

TEST_CASE("verify passes every oracle check") {
  bool passed = false;
  const MetricsRecord m = cli::run_verify(passed);
  CHECK(passed);
  CHECK(m.scalars.at("h_identity_residual") < 1e-10);
  CHECK(m.scalars.at("sinkhorn_marginal_residual") < 1e-10);
}

TEST_CASE("command-line exit codes") {
  const fs::path d = scratch("exit");
  CHECK(run_cli("verify") == 0);
  CHECK(run_cli("ddgs --output " + d.string()) == 2);  // no seed
  CHECK(run_cli("ddgs --seed 1 --set model.nmae=x --output " + d.string()) == 2);
  CHECK(run_cli("ddgs --seed 1 --set target.name=banana --output " + d.string()) == 2);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("eval --samples-csv " + (d / "missing.csv").string()) == 1);
  fs::remove_all(d);
}
