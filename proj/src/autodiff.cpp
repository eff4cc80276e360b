#include "grm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace grm::ad {

namespace {

std::vector<OpKind>& faulty_kinds() {
  static std::vector<OpKind> kinds;
  return kinds;
}

bool is_faulty(OpKind kind) {
  const auto& kinds = faulty_kinds();
  return std::find(kinds.begin(), kinds.end(), kind) != kinds.end();
}

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

[[noreturn]] void shape_fail(OpKind kind, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " +
                   shape_str(a) + " vs " + shape_str(b));
}

void same_tape(const Tensor& a, const Tensor& b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw std::invalid_argument("operands belong to different tapes");
  }
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::LogSoftmaxRows: return "log_softmax_rows";
    case OpKind::Clamp: return "clamp";
    case OpKind::PairwiseMin: return "pairwise_min";
    case OpKind::GatherCols: return "gather_cols";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::MeanAll: return "mean_all";
    case OpKind::SumAll: return "sum_all";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

const Matrix& Tensor::value() const {
  if (!tape_) throw std::logic_error("empty tensor handle");
  return tape_->nodes_.at(id_).value;
}

Matrix Tensor::grad() const {
  const auto& node = tape_->nodes_.at(id_);
  if (node.grad.size() == 0) {
    return Matrix::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

bool Tensor::requires_grad() const {
  return tape_->nodes_.at(id_).requires_grad;
}

double Tensor::item() const {
  const auto& v = value();
  if (v.size() != 1) {
    throw ShapeError("item: tensor is " + shape_str(v) + ", expected 1x1");
  }
  return v(0, 0);
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::leaf(Matrix value, bool requires_grad) {
  Node node;
  node.kind = OpKind::Leaf;
  node.requires_grad = requires_grad;
  if (requires_grad) node.grad = Matrix::Zero(value.rows(), value.cols());
  node.value = std::move(value);
  return push(std::move(node));
}

Tensor Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

void Tape::zero_grad() {
  for (auto& node : nodes_) {
    if (node.grad.size() != 0) node.grad.setZero();
  }
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) {
    throw std::invalid_argument("backward: loss is not on this tape");
  }
  const auto& out = nodes_.at(loss.id());
  if (out.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(out.value));
  }
  if (!out.requires_grad) return;

  std::vector<Matrix> adjoint(loss.id() + 1);
  adjoint[loss.id()] = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const auto& node = nodes_[i];
    if (!node.requires_grad || adjoint[i].size() == 0) continue;
    if (node.kind == OpKind::Leaf) {
      nodes_[i].grad += adjoint[i];
    } else {
      propagate(node, adjoint[i], adjoint);
    }
    adjoint[i].resize(0, 0);
  }
}

namespace {

void accumulate(std::vector<Matrix>& adjoint, std::size_t id, Matrix g) {
  if (adjoint[id].size() == 0) {
    adjoint[id] = std::move(g);
  } else {
    adjoint[id] += g;
  }
}

}  // namespace

void Tape::propagate(const Node& node, const Matrix& g,
                     std::vector<Matrix>& adjoint) const {
  const Node& a = nodes_[node.lhs];
  const Node* b = node.arity > 1 ? &nodes_[node.rhs] : nullptr;
  const double fault = is_faulty(node.kind) ? 1.5 : 1.0;

  auto send_a = [&](Matrix grad) {
    if (a.requires_grad) accumulate(adjoint, node.lhs, fault * grad);
  };
  auto send_b = [&](Matrix grad) {
    if (b && b->requires_grad) accumulate(adjoint, node.rhs, fault * grad);
  };

  switch (node.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::MatMul:
      if (a.requires_grad) send_a(g * b->value.transpose());
      if (b->requires_grad) send_b(a.value.transpose() * g);
      break;
    case OpKind::Add:
      send_a(g);
      if (b->requires_grad) {
        send_b(node.broadcast ? Matrix(g.colwise().sum()) : g);
      }
      break;
    case OpKind::Mul:
      if (a.requires_grad) send_a(g.cwiseProduct(b->value));
      if (b->requires_grad) send_b(g.cwiseProduct(a.value));
      break;
    case OpKind::Div:
      if (a.requires_grad) send_a(g.cwiseQuotient(b->value));
      if (b->requires_grad) {
        send_b(-(g.cwiseProduct(a.value))
                    .cwiseQuotient(b->value.cwiseProduct(b->value)));
      }
      break;
    case OpKind::Scale:
      send_a(node.lo * g);
      break;
    case OpKind::Relu:
      send_a(g.cwiseProduct(
          (a.value.array() > 0.0).cast<double>().matrix()));
      break;
    case OpKind::Log:
      send_a(g.cwiseQuotient(a.value));
      break;
    case OpKind::Exp:
      send_a(g.cwiseProduct(node.value));
      break;
    case OpKind::SoftmaxRows: {
      const Matrix& s = node.value;
      Eigen::VectorXd dots = g.cwiseProduct(s).rowwise().sum();
      send_a(s.cwiseProduct(g - dots.replicate(1, g.cols())));
      break;
    }
    case OpKind::LogSoftmaxRows: {
      Matrix s = node.value.array().exp().matrix();
      Eigen::VectorXd totals = g.rowwise().sum();
      send_a(g - s.cwiseProduct(totals.replicate(1, g.cols())));
      break;
    }
    case OpKind::Clamp: {
      auto inside = (a.value.array() >= node.lo) && (a.value.array() <= node.hi);
      send_a(g.cwiseProduct(inside.cast<double>().matrix()));
      break;
    }
    case OpKind::PairwiseMin: {
      Matrix to_a = (a.value.array() <= b->value.array()).cast<double>();
      if (a.requires_grad) send_a(g.cwiseProduct(to_a));
      if (b->requires_grad) {
        send_b(g.cwiseProduct((1.0 - to_a.array()).matrix()));
      }
      break;
    }
    case OpKind::GatherCols: {
      Matrix grad = Matrix::Zero(a.value.rows(), a.value.cols());
      for (Eigen::Index r = 0; r < grad.rows(); ++r) {
        grad(r, node.index[static_cast<std::size_t>(r)]) += g(r, 0);
      }
      send_a(std::move(grad));
      break;
    }
    case OpKind::GatherRows: {
      Matrix grad = Matrix::Zero(a.value.rows(), a.value.cols());
      for (std::size_t j = 0; j < node.index.size(); ++j) {
        grad.row(node.index[j]) += g.row(static_cast<Eigen::Index>(j));
      }
      send_a(std::move(grad));
      break;
    }
    case OpKind::MeanAll:
      send_a(Matrix::Constant(a.value.rows(), a.value.cols(),
                              g(0, 0) / static_cast<double>(a.value.size())));
      break;
    case OpKind::SumAll:
      send_a(Matrix::Constant(a.value.rows(), a.value.cols(), g(0, 0)));
      break;
  }
}

// ---------------------------------------------------------------------------
// Primitive ops

struct Recorder {
  static Tensor unary(const Tensor& a, OpKind kind, Matrix value) {
    Tape::Node node;
    node.kind = kind;
    node.lhs = a.id();
    node.arity = 1;
    node.requires_grad = a.requires_grad();
    node.value = std::move(value);
    return a.tape()->push(std::move(node));
  }

  static Tensor binary(const Tensor& a, const Tensor& b, OpKind kind,
                       Matrix value) {
    Tape::Node node;
    node.kind = kind;
    node.lhs = a.id();
    node.rhs = b.id();
    node.arity = 2;
    node.requires_grad = a.requires_grad() || b.requires_grad();
    node.value = std::move(value);
    return a.tape()->push(std::move(node));
  }

  static Tape::Node& last(const Tensor& t) {
    return t.tape()->nodes_[t.id()];
  }
};

Tensor matmul(const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  if (a.cols() != b.rows()) shape_fail(OpKind::MatMul, a.value(), b.value());
  return Recorder::binary(a, b, OpKind::MatMul, a.value() * b.value());
}

Tensor add(const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.rows() == y.rows() && x.cols() == y.cols()) {
    return Recorder::binary(a, b, OpKind::Add, x + y);
  }
  if (y.rows() == 1 && y.cols() == x.cols()) {
    Matrix out = x.rowwise() + y.row(0);
    Tensor t = Recorder::binary(a, b, OpKind::Add, std::move(out));
    Recorder::last(t).broadcast = true;
    return t;
  }
  shape_fail(OpKind::Add, x, y);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_fail(OpKind::Mul, a.value(), b.value());
  }
  return Recorder::binary(a, b, OpKind::Mul, a.value().cwiseProduct(b.value()));
}

Tensor div(const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_fail(OpKind::Div, a.value(), b.value());
  }
  const Matrix& y = b.value();
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      if (y(r, c) == 0.0) {
        throw DomainError("div: zero denominator at (" + std::to_string(r) +
                          ", " + std::to_string(c) + ")");
      }
    }
  }
  return Recorder::binary(a, b, OpKind::Div, a.value().cwiseQuotient(y));
}

Tensor scale(const Tensor& a, double factor) {
  Tensor t = Recorder::unary(a, OpKind::Scale, factor * a.value());
  Recorder::last(t).lo = factor;
  return t;
}

Tensor relu(const Tensor& a) {
  return Recorder::unary(a, OpKind::Relu, a.value().cwiseMax(0.0));
}

Tensor log(const Tensor& a) {
  const Matrix& x = a.value();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      if (!(x(r, c) > 0.0)) {
        throw DomainError("log: non-positive input " + std::to_string(x(r, c)) +
                          " at (" + std::to_string(r) + ", " +
                          std::to_string(c) + ")");
      }
    }
  }
  return Recorder::unary(a, OpKind::Log, x.array().log().matrix());
}

Tensor exp(const Tensor& a) {
  return Recorder::unary(a, OpKind::Exp, a.value().array().exp().matrix());
}

namespace {

Matrix stable_softmax(const Matrix& z) {
  Eigen::VectorXd peak = z.rowwise().maxCoeff();
  Matrix e = (z - peak.replicate(1, z.cols())).array().exp().matrix();
  Eigen::VectorXd totals = e.rowwise().sum();
  return e.cwiseQuotient(totals.replicate(1, z.cols()));
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  return Recorder::unary(a, OpKind::SoftmaxRows, stable_softmax(a.value()));
}

Tensor log_softmax_rows(const Tensor& a) {
  const Matrix& z = a.value();
  Eigen::VectorXd peak = z.rowwise().maxCoeff();
  Matrix shifted = z - peak.replicate(1, z.cols());
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  return Recorder::unary(a, OpKind::LogSoftmaxRows,
                         shifted - lse.replicate(1, z.cols()));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) {
    throw std::invalid_argument("clamp: lo must not exceed hi");
  }
  Tensor t = Recorder::unary(a, OpKind::Clamp,
                             a.value().cwiseMax(lo).cwiseMin(hi));
  auto& node = Recorder::last(t);
  node.lo = lo;
  node.hi = hi;
  return t;
}

Tensor pairwise_min(const Tensor& a, const Tensor& b) {
  same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_fail(OpKind::PairwiseMin, a.value(), b.value());
  }
  return Recorder::binary(a, b, OpKind::PairwiseMin,
                          a.value().cwiseMin(b.value()));
}

Tensor gather_cols(const Tensor& a, std::span<const int> cols) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(cols.size()) != x.rows()) {
    throw ShapeError("gather_cols: " + std::to_string(cols.size()) +
                     " indices for " + shape_str(x));
  }
  Matrix out(x.rows(), 1);
  std::vector<Eigen::Index> index(cols.size());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int c = cols[static_cast<std::size_t>(r)];
    if (c < 0 || c >= x.cols()) {
      throw ShapeError("gather_cols: column " + std::to_string(c) +
                       " out of range for " + shape_str(x));
    }
    out(r, 0) = x(r, c);
    index[static_cast<std::size_t>(r)] = c;
  }
  Tensor t = Recorder::unary(a, OpKind::GatherCols, std::move(out));
  Recorder::last(t).index = std::move(index);
  return t;
}

Tensor gather_rows(const Tensor& a, std::span<const Eigen::Index> rows) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j] < 0 || rows[j] >= x.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[j]) +
                       " out of range for " + shape_str(x));
    }
    out.row(static_cast<Eigen::Index>(j)) = x.row(rows[j]);
  }
  Tensor t = Recorder::unary(a, OpKind::GatherRows, std::move(out));
  Recorder::last(t).index.assign(rows.begin(), rows.end());
  return t;
}

Tensor mean_all(const Tensor& a) {
  if (a.value().size() == 0) throw ShapeError("mean_all: empty tensor");
  return Recorder::unary(a, OpKind::MeanAll,
                         Matrix::Constant(1, 1, a.value().mean()));
}

Tensor sum_all(const Tensor& a) {
  return Recorder::unary(a, OpKind::SumAll,
                         Matrix::Constant(1, 1, a.value().sum()));
}

// ---------------------------------------------------------------------------
// Finite-difference verification

namespace {

double evaluate(const ScalarFn& f, std::vector<Matrix>& points) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(points.size());
  for (const auto& p : points) leaves.push_back(tape.constant(p));
  return f(tape, leaves).item();
}

}  // namespace

double check_gradients(const ScalarFn& f, std::span<const Matrix> points,
                       double h) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& p : points) leaves.push_back(tape.leaf(p, true));
    Tensor out = f(tape, leaves);
    if (!std::isfinite(out.item())) {
      throw DomainError("check_gradients: non-finite value at base point");
    }
    tape.backward(out);
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad());
  }

  std::vector<Matrix> work(points.begin(), points.end());
  double worst = 0.0;
  for (std::size_t p = 0; p < work.size(); ++p) {
    Matrix& x = work[p];
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double saved = x(i);
      x(i) = saved + h;
      const double up = evaluate(f, work);
      x(i) = saved - h;
      const double down = evaluate(f, work);
      x(i) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw DomainError("check_gradients: non-finite evaluation at input " +
                          std::to_string(p) + " coordinate " +
                          std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[p](i) - numeric) /
                         std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double check_gradients(const std::function<Tensor(Tape&, const Tensor&)>& f,
                       const Matrix& point, double h) {
  ScalarFn wrapped = [&f](Tape& tape, std::span<const Tensor> leaves) {
    return f(tape, leaves[0]);
  };
  return check_gradients(wrapped, std::span<const Matrix>(&point, 1), h);
}

namespace testing {

void inject_fault(OpKind kind) { faulty_kinds().push_back(kind); }
void clear_faults() { faulty_kinds().clear(); }

}  // namespace testing

}  // namespace grm::ad
