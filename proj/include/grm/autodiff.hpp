#pragma once

// Reverse-mode differentiation over dense 2-D double matrices.
//
// A Tape records every forward op in execution order; Tensor is a light
// handle (tape pointer + node id). Batches are rows, features are columns.
// Higher-rank data (segmentation grids) is flattened to rows by the caller.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace grm::ad {

using Matrix = Eigen::MatrixXd;

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Mul,
  Div,
  Scale,
  Relu,
  Log,
  Exp,
  SoftmaxRows,
  LogSoftmaxRows,
  Clamp,
  PairwiseMin,
  GatherCols,
  GatherRows,
  MeanAll,
  SumAll,
};

std::string_view op_name(OpKind kind);

/// Thrown when operand shapes do not conform to an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an op is evaluated outside its domain (log of x <= 0, x / 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Accumulated gradient. Only leaves that require grad carry one; every
  /// other node reports a zero matrix of matching shape.
  Matrix grad() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

  /// Convenience for 1x1 results.
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value, bool requires_grad = true);
  Tensor constant(Matrix value) { return leaf(std::move(value), false); }

  /// Populates leaf gradients with d(loss)/d(leaf). Accumulates across calls.
  void backward(const Tensor& loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }

 private:
  friend class Tensor;
  friend struct Recorder;

  struct Node {
    OpKind kind = OpKind::Leaf;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    int arity = 0;
    bool requires_grad = false;
    Matrix value;
    Matrix grad;  // leaves with requires_grad only
    double lo = 0.0;
    double hi = 0.0;
    std::vector<Eigen::Index> index;
    bool broadcast = false;
  };

  Tensor push(Node node);
  void propagate(const Node& node, const Matrix& upstream,
                 std::vector<Matrix>& adjoint) const;

  std::vector<Node> nodes_;
};

// Primitive ops. All operands must live on the same tape.

Tensor matmul(const Tensor& a, const Tensor& b);
/// Elementwise sum; `b` may also be a 1 x cols row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
/// Subgradient is 1 on the closed interval [lo, hi] and 0 outside it.
Tensor clamp(const Tensor& a, double lo, double hi);
/// Gradient flows to the smaller operand; ties go to `a`.
Tensor pairwise_min(const Tensor& a, const Tensor& b);
/// out(r, 0) = a(r, cols[r]).
Tensor gather_cols(const Tensor& a, std::span<const int> cols);
/// out(j, :) = a(rows[j], :). Rows may repeat; backward scatter-adds.
Tensor gather_rows(const Tensor& a, std::span<const Eigen::Index> rows);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

/// Builds a scalar on `tape` from the given leaves.
using ScalarFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

/// max over coordinates of |analytic - central| / max(1, |central|).
double check_gradients(const ScalarFn& f, std::span<const Matrix> points,
                       double h = 1e-6);
double check_gradients(const std::function<Tensor(Tape&, const Tensor&)>& f,
                       const Matrix& point, double h = 1e-6);

namespace testing {
/// Negative-control hook: the backward rule of `kind` scales the gradient it
/// passes to its inputs by 1.5. Used to prove the gradient checker catches
/// broken rules. Not thread-safe.
void inject_fault(OpKind kind);
void clear_faults();
}  // namespace testing

}  // namespace grm::ad
