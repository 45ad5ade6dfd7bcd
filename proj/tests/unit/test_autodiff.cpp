#include <doctest.h>

#include "diffbridge/autodiff.hpp"
#include "diffbridge/network.hpp"
#include "diffbridge/rng.hpp"
#include "fd_check.hpp"

using namespace diffbridge;
using testing_support::fd_relative_error;

namespace {

// A composite exercising every op: sum((silu(W x + b) * c) scaled by column weights)^2 plus a columnwise term.
double composite(const Eigen::VectorXd& p, Eigen::VectorXd* grad) {
  const Matrix x = (Matrix(2, 3) << 0.3, -1.0, 0.5, 1.2, 0.1, -0.7).finished();
  const Eigen::RowVectorXd w = (Eigen::RowVectorXd(3) << 1.0, 0.5, 2.0).finished();
  ad::Tape tape;
  Eigen::VectorXd sink = Eigen::VectorXd::Zero(p.size());
  ad::Var W = tape.parameter(p.data(), 3, 2, sink.data());
  ad::Var b = tape.parameter(p.data() + 6, 3, 1, sink.data() + 6);
  ad::Var h = ad::silu(ad::add(ad::matmul(W, tape.constant(x)), b));
  ad::Var c = tape.constant(Matrix::Constant(3, 3, 0.7));
  ad::Var stacked = ad::concat_rows({ad::mul(h, c), ad::scale(h, -2.0)});
  ad::Var a = ad::sum_squares(ad::scale_columns(stacked, w));
  Eigen::RowVectorXd vals = h.value().colwise().squaredNorm();
  Matrix grads = 2.0 * h.value();
  ad::Var cw = ad::sum(ad::columnwise(h, vals, grads));
  ad::Var loss = ad::sub(a, ad::scale(cw, 0.3));
  if (grad != nullptr) {
    tape.backward(loss);
    *grad = sink;
  }
  return loss.value()(0, 0);
}

}  // namespace

TEST_CASE("tape gradients of the primitive ops match finite differences") {
  Rng rng(3);
  const Eigen::VectorXd p = rng.normal_matrix(9, 1).col(0);
  Eigen::VectorXd g;
  composite(p, &g);
  CHECK(fd_relative_error([](const Eigen::VectorXd& q) { return composite(q, nullptr); }, p, g) < 1e-4);
}

TEST_CASE("input leaves expose their gradient") {
  ad::Tape tape;
  ad::Var x = tape.input((Matrix(2, 1) << 1.0, -2.0).finished());
  tape.backward(ad::sum_squares(x));
  CHECK(tape.grad(x)(0, 0) == doctest::Approx(2.0));
  CHECK(tape.grad(x)(1, 0) == doctest::Approx(-4.0));
}

TEST_CASE("backward rejects a non-scalar root") {
  ad::Tape tape;
  ad::Var x = tape.input(Matrix::Ones(2, 2));
  CHECK_THROWS(tape.backward(x));
}

TEST_CASE("mlp parameter and input gradients match finite differences") {
  Rng rng(5);
  MlpArchitecture arch;
  arch.state_dim = 2;
  arch.cond_dim = 1;
  arch.output_dim = 2;
  arch.hidden = {8, 8};
  arch.time_features = 4;
  arch.final_layer_scale = 1.0;
  const Mlp net(arch, rng);
  const Eigen::RowVectorXd t = (Eigen::RowVectorXd(3) << 0.1, 0.5, 0.9).finished();
  const Matrix x = rng.normal_matrix(2, 3), y = rng.normal_matrix(1, 3);

  auto loss_at = [&](const Eigen::VectorXd& params, Eigen::VectorXd* grad) {
    Mlp m(arch, params);
    ad::Tape tape;
    Eigen::VectorXd sink = Eigen::VectorXd::Zero(params.size());
    ad::Var out = m.record(tape, t, tape.constant(x), y, sink.data());
    ad::Var l = ad::sum_squares(out);
    tape.backward(l);
    if (grad) *grad = sink;
    return l.value()(0, 0);
  };
  Eigen::VectorXd g;
  loss_at(net.params(), &g);
  CHECK(fd_relative_error([&](const Eigen::VectorXd& q) { return loss_at(q, nullptr); }, net.params(), g) < 1e-4);

  // Recorded forward pass agrees with the plain evaluation.
  ad::Tape tape;
  ad::Var out = net.record(tape, t, tape.constant(x), y, nullptr);
  CHECK((out.value() - net.evaluate(t, x, y)).norm() < 1e-12);
}

TEST_CASE("mlp time features and checkpoint round trip") {
  const Matrix f = time_features((Eigen::RowVectorXd(2) << 0.0, 1.0).finished(), 6, 2.0);
  CHECK(f.rows() == 6);
  CHECK(f(0, 0) == doctest::Approx(0.0));  // sin(0)
  CHECK(f(1, 0) == doctest::Approx(1.0));  // cos(0)
  CHECK_THROWS(time_features(Eigen::RowVectorXd::Zero(1), 5, 1.0));

  Rng rng(8);
  MlpArchitecture arch;
  arch.hidden = {4};
  const Mlp net(arch, rng);
  const auto path = std::filesystem::temp_directory_path() / "diffbridge_unit_ckpt.bin";
  save_checkpoint(net, path, "unit");
  const Mlp back = load_checkpoint(path);
  CHECK(back.architecture() == net.architecture());
  CHECK((back.params().array() == net.params().array()).all());
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".manifest");
}
