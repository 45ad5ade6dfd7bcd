#include <doctest.h>

#include <cmath>
#include <limits>

#include "diffbridge/ddgs.hpp"
#include "diffbridge/errors.hpp"
#include "fd_check.hpp"

using namespace diffbridge;
using testing_support::fd_relative_error;

namespace {

TrainingConfig small_training(int iterations = 20) {
  TrainingConfig t{iterations, 32};
  t.hidden = {16};
  t.time_features = 4;
  return t;
}

Mlp random_net(int dim, double horizon, Rng& rng, double scale = 0.3) {
  MlpArchitecture a = make_architecture(small_training(), dim, 0, horizon);
  a.final_layer_scale = scale;
  return Mlp(a, rng);
}

}  // namespace

TEST_CASE("energy weight is h^2 / (2 v(h))") {
  for (double h : {0.01, 0.1, 1.0}) CHECK(energy_weight(h) == doctest::Approx(h * h / (2 * (1 - std::exp(-h)))));
}

TEST_CASE("reverse-KL loss gradient matches finite differences") {
  Rng rng(1);
  const TimeGrid grid = TimeGrid::uniform(1.0, 6);
  const TargetDensity target = make_gaussian_mixture(
      {0.4, 0.6}, {GaussianParams::isotropic(Vector::Constant(2, -1.0), 0.5), GaussianParams::isotropic(Vector::Constant(2, 1.0), 0.5)});
  const Mlp u = random_net(2, 1.0, rng);
  const NoiseRecord noise = draw_noise(2, 12, 6, rng);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(u.num_params());
  reverse_kl_loss(u, target, grid, noise, &g);
  auto f = [&](const Eigen::VectorXd& p) { return reverse_kl_loss(Mlp(u.architecture(), p), target, grid, noise).loss; };
  CHECK(fd_relative_error(f, u.params(), g) < 1e-4);
}

TEST_CASE("controlled loss with a frozen base drift differentiates only the new network") {
  Rng rng(2);
  const TimeGrid grid = TimeGrid::uniform(1.0, 5);
  const TargetDensity target = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 2.0));
  CorrectionSum base;
  base.networks.push_back(random_net(1, 1.0, rng));
  const Mlp u = random_net(1, 1.0, rng);
  const NoiseRecord noise = draw_noise(1, 10, 5, rng);
  const TerminalPotential pot = reference_potential(target);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(u.num_params());
  controlled_kl_loss(u, base, pot, grid, noise, &g);
  auto f = [&](const Eigen::VectorXd& p) {
    return controlled_kl_loss(Mlp(u.architecture(), p), base, pot, grid, noise).loss;
  };
  CHECK(fd_relative_error(f, u.params(), g) < 1e-4);
}

TEST_CASE("zero control on a standard normal target: loss and log weights vanish") {
  Rng rng(3);
  const TimeGrid grid = TimeGrid::uniform(2.0, 8);
  const TargetDensity target = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 1.0));
  Mlp u = random_net(1, 2.0, rng);
  u.zero();
  const NoiseRecord noise = draw_noise(1, 64, 8, rng);
  const ControlledLoss l = reverse_kl_loss(u, target, grid, noise);
  CHECK(std::abs(l.loss) < 1e-12);
  const PathBatch paths = rollout(&u, CorrectionSum{}, grid, noise);
  const Eigen::RowVectorXd lw = controlled_log_weights(&u, reference_potential(target), paths);
  CHECK(lw.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("reverse-KL loss is bounded below by -log Z") {
  // Jensen: E[-log w] >= -log E[w] = -log Z for any control.
  Rng rng(4);
  const TimeGrid grid = TimeGrid::uniform(1.0, 8);
  const TargetDensity target = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 2.0), 2.5);
  const Mlp u = random_net(1, 1.0, rng, 1.0);
  const NoiseRecord noise = draw_noise(1, 4000, 8, rng);
  const ControlledLoss l = reverse_kl_loss(u, target, grid, noise);
  CHECK(l.loss >= -*target.known_log_Z - 0.02);
}

TEST_CASE("log weights equal the negated per-path loss terms") {
  Rng rng(5);
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  const TargetDensity target = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 0.5));
  const Mlp u = random_net(1, 1.0, rng, 0.5);
  const NoiseRecord noise = draw_noise(1, 200, 4, rng);
  const PathBatch paths = rollout(&u, CorrectionSum{}, grid, noise);
  const Eigen::RowVectorXd lw = controlled_log_weights(&u, reference_potential(target), paths);
  // E[log w] over paths equals -loss up to the zero-mean noise cross term.
  const ControlledLoss l = reverse_kl_loss(u, target, grid, noise);
  CHECK(std::abs(lw.mean() + l.loss) < 0.05);
}

TEST_CASE("log mean exp is stable") {
  const Eigen::RowVectorXd v = (Eigen::RowVectorXd(3) << 1000.0, 1000.0, 1000.0).finished();
  CHECK(log_mean_exp(v) == doctest::Approx(1000.0));
  const Eigen::RowVectorXd w = (Eigen::RowVectorXd(2) << 0.0, std::log(3.0)).finished();
  CHECK(log_mean_exp(w) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("backward dsm loss gradient matches finite differences") {
  Rng rng(6);
  const TimeGrid grid = TimeGrid::uniform(1.0, 5);
  const NoiseRecord noise = draw_noise(1, 8, 5, rng);
  const PathBatch paths = rollout(nullptr, CorrectionSum{}, grid, noise);
  const Mlp net = random_net(1, 1.0, rng);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(net.num_params());
  backward_dsm_loss(net, paths, &g);
  auto f = [&](const Eigen::VectorXd& p) { return backward_dsm_loss(Mlp(net.architecture(), p), paths); };
  CHECK(fd_relative_error(f, net.params(), g) < 1e-4);
}

TEST_CASE("flow log density of the stationary backward process is log N(0, 1)") {
  const TimeGrid grid = TimeGrid::uniform(1.0, 16);
  const BatchField zero = [](double, const Matrix& x) { return Matrix::Zero(x.rows(), x.cols()); };
  const BatchField score = [](double, const Matrix& x) -> Matrix { return -x; };
  const Matrix pts = (Matrix(1, 3) << -1.0, 0.0, 2.0).finished();
  const Eigen::RowVectorXd lq = flow_log_density(zero, score, grid, pts);
  for (int j = 0; j < 3; ++j) CHECK(lq(j) == doctest::Approx(log_standard_normal(pts.col(j))).epsilon(1e-9));
}

TEST_CASE("optional potential values give a NaN loss but an exact gradient") {
  Rng rng(7);
  const TimeGrid grid = TimeGrid::uniform(1.0, 4);
  const TargetDensity target = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 2.0));
  TerminalPotential full = reference_potential(target);
  TerminalPotential partial = full;
  partial.values_optional = true;
  partial.evaluate = [full](const Matrix& z, Eigen::RowVectorXd& v, Matrix& g) {
    full.evaluate(z, v, g);
    v.setConstant(std::numeric_limits<double>::quiet_NaN());
  };
  const Mlp u = random_net(1, 1.0, rng);
  const NoiseRecord noise = draw_noise(1, 10, 4, rng);
  Eigen::VectorXd ga = Eigen::VectorXd::Zero(u.num_params()), gb = ga;
  controlled_kl_loss(u, CorrectionSum{}, full, grid, noise, &ga);
  const ControlledLoss lb = controlled_kl_loss(u, CorrectionSum{}, partial, grid, noise, &gb);
  CHECK(std::isnan(lb.loss));
  CHECK((ga - gb).norm() < 1e-12 * std::max(1.0, ga.norm()));
}

TEST_CASE("ddgs training and sampling are reproducible") {
  const TargetDensity target = make_gaussian_target(GaussianParams::isotropic(Vector::Zero(1), 2.0));
  DdgsConfig c{TimeGrid::uniform(1.0, 8), small_training(15)};
  Rng a(21), b(21);
  const HTransformSampler sa = train_ddgs(target, c, a), sb = train_ddgs(target, c, b);
  const WeightedSamples wa = sample_ddgs(sa, 40, a), wb = sample_ddgs(sb, 40, b);
  CHECK((wa.samples.array() == wb.samples.array()).all());
  CHECK((wa.log_weights.array() == wb.log_weights.array()).all());
}
