#include "diffbridge/autodiff.hpp"

#include <cmath>
#include <stdexcept>

#include "diffbridge/errors.hpp"

namespace diffbridge::ad {

const Matrix& value_of(const Tape& tape, int id) { return tape.nodes_[static_cast<std::size_t>(id)].value; }

Matrix& grad_of(Tape& tape, int id) {
  auto& n = tape.nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool needs_grad(const Tape& tape, int id) { return tape.nodes_[static_cast<std::size_t>(id)].needs_grad; }

const Matrix& Var::value() const { return value_of(*tape, id); }

Var record(Tape& tape, Matrix value, std::vector<int> parents, std::function<void(Tape&, int)> backprop) {
  bool any = false;
  for (int p : parents) any = any || needs_grad(tape, p);
  Tape::Node node;
  node.value = std::move(value);
  node.needs_grad = any;
  if (any) node.backprop = std::move(backprop);
  tape.nodes_.push_back(std::move(node));
  return Var{&tape, static_cast<int>(tape.nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const double* data, Eigen::Index rows, Eigen::Index cols, double* grad_sink) {
  Node n;
  n.value = Eigen::Map<const Matrix>(data, rows, cols);
  n.grad_sink = grad_sink;
  n.needs_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  n.is_input = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("root belongs to another tape");
  const auto& r = nodes_[static_cast<std::size_t>(root.id)];
  if (r.value.rows() != 1 || r.value.cols() != 1) throw DimensionError("backward requires a scalar root");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_of(*this, root.id)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backprop) n.backprop(*this, i);
    if (n.grad_sink != nullptr) Eigen::Map<Matrix>(n.grad_sink, n.value.rows(), n.value.cols()) += n.grad;
  }
}

const Matrix& Tape::grad(Var v) const {
  static const Matrix empty;
  const auto& n = nodes_[static_cast<std::size_t>(v.id)];
  return n.grad.size() == 0 ? empty : n.grad;
}

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

// Reduces an upstream gradient to the (possibly broadcast) shape of an operand.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (cols == 1 && g.rows() == rows) return g.rowwise().sum();
  throw DimensionError("cannot reduce gradient to operand shape");
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return record(t, a.value() * b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = grad_of(tp, self);
    if (needs_grad(tp, ia)) grad_of(tp, ia).noalias() += g * value_of(tp, ib).transpose();
    if (needs_grad(tp, ib)) grad_of(tp, ib).noalias() += value_of(tp, ia).transpose() * g;
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out;
  if (bv.rows() == av.rows() && bv.cols() == av.cols()) {
    out = av + bv;
  } else if (bv.cols() == 1 && bv.rows() == av.rows()) {
    out = av.colwise() + bv.col(0);
  } else if (bv.size() == 1) {
    out = av.array() + bv(0, 0);
  } else {
    throw DimensionError("add: incompatible shapes");
  }
  const int ia = a.id, ib = b.id;
  return record(t, std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = grad_of(tp, self);
    if (needs_grad(tp, ia)) grad_of(tp, ia) += g;
    if (needs_grad(tp, ib)) {
      const Matrix& bv = value_of(tp, ib);
      grad_of(tp, ib) += reduce_to(g, bv.rows(), bv.cols());
    }
  });
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return record(t, c * a.value(), {ia}, [ia, c](Tape& tp, int self) { grad_of(tp, ia) += c * grad_of(tp, self); });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("mul: shapes differ");
  Tape& t = *a.tape;
  const int ia = a.id, ib = b.id;
  return record(t, a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = grad_of(tp, self);
    if (needs_grad(tp, ia)) grad_of(tp, ia) += g.cwiseProduct(value_of(tp, ib));
    if (needs_grad(tp, ib)) grad_of(tp, ib) += g.cwiseProduct(value_of(tp, ia));
  });
}

Var scale_columns(Var a, const Eigen::RowVectorXd& w) {
  if (w.size() != a.cols()) throw DimensionError("scale_columns: one weight per column");
  Tape& t = *a.tape;
  const int ia = a.id;
  Matrix out = a.value() * w.asDiagonal();
  return record(t, std::move(out), {ia}, [ia, w](Tape& tp, int self) {
    grad_of(tp, ia) += grad_of(tp, self) * w.asDiagonal();
  });
}

Var silu(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  const Matrix& x = a.value();
  const Matrix sig = (1.0 + (-x.array()).exp()).inverse().matrix();
  Matrix out = x.cwiseProduct(sig);
  // d/dx x sigma(x) = sigma (1 + x (1 - sigma))
  Matrix deriv = (sig.array() * (1.0 + x.array() * (1.0 - sig.array()))).matrix();
  return record(t, std::move(out), {ia}, [ia, deriv = std::move(deriv)](Tape& tp, int self) {
    grad_of(tp, ia) += grad_of(tp, self).cwiseProduct(deriv);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  Tape& t = *parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.tape != &t) throw std::invalid_argument("operands recorded on different tapes");
    if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    ids.push_back(p.id);
    offsets.push_back(r);
    r += p.rows();
  }
  return record(t, std::move(out), ids, [ids, offsets](Tape& tp, int self) {
    const Matrix& g = grad_of(tp, self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!needs_grad(tp, ids[i])) continue;
      Matrix& gi = grad_of(tp, ids[i]);
      gi += g.middleRows(offsets[i], gi.rows());
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return record(t, Matrix::Constant(1, 1, a.value().sum()), {ia}, [ia](Tape& tp, int self) {
    grad_of(tp, ia).array() += grad_of(tp, self)(0, 0);
  });
}

Var sum_squares(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return record(t, Matrix::Constant(1, 1, a.value().squaredNorm()), {ia}, [ia](Tape& tp, int self) {
    grad_of(tp, ia) += 2.0 * grad_of(tp, self)(0, 0) * value_of(tp, ia);
  });
}

Var columnwise(Var a, Eigen::RowVectorXd values, Matrix grads) {
  if (values.size() != a.cols() || grads.rows() != a.rows() || grads.cols() != a.cols())
    throw DimensionError("columnwise: value/gradient shapes do not match operand");
  Tape& t = *a.tape;
  const int ia = a.id;
  return record(t, Matrix(values), {ia}, [ia, grads = std::move(grads)](Tape& tp, int self) {
    grad_of(tp, ia) += grads * grad_of(tp, self).row(0).asDiagonal();
  });
}

}  // namespace diffbridge::ad
