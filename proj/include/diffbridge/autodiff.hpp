#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace diffbridge::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a matrix-valued node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode recording of a computation over dense matrices. Nodes are
/// appended in evaluation order, so a reverse sweep is a valid topological order.
class Tape {
 public:
  Var constant(Matrix value);
  /// A leaf whose gradient is added into `grad_sink` (same shape, column-major) by backward().
  Var parameter(const double* data, Eigen::Index rows, Eigen::Index cols, double* grad_sink);
  /// A leaf whose gradient is kept on the tape and read back with grad().
  Var input(Matrix value);

  /// Seeds d(root)/d(root) = 1 and sweeps backwards. Root must be 1 x 1.
  void backward(Var root);
  /// Gradient of the last backward() root with respect to a node.
  const Matrix& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  friend struct Var;
  friend Var record(Tape& tape, Matrix value, std::vector<int> parents,
                    std::function<void(Tape&, int)> backprop);
  friend Matrix& grad_of(Tape& tape, int id);
  friend const Matrix& value_of(const Tape& tape, int id);
  friend bool needs_grad(const Tape& tape, int id);

  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, int)> backprop;
    double* grad_sink = nullptr;
    bool needs_grad = false;
    bool is_input = false;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a + b; b may be a column broadcast over a's columns, or a 1 x 1 broadcast.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double c);
/// Elementwise product.
Var mul(Var a, Var b);
/// Multiplies column j of a by w(j).
Var scale_columns(Var a, const Eigen::RowVectorXd& w);
Var silu(Var a);
Var concat_rows(const std::vector<Var>& parts);
/// Sum of all entries, 1 x 1.
Var sum(Var a);
/// Sum of squared entries, 1 x 1.
Var sum_squares(Var a);
/// Column-wise scalar function with externally supplied values and gradients:
/// out(0, j) = values(j), d out(0, j) / d a(:, j) = grads(:, j).
Var columnwise(Var a, Eigen::RowVectorXd values, Matrix grads);

}  // namespace diffbridge::ad
