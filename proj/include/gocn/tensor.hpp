#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "gocn/errors.hpp"
#include "gocn/rng.hpp"

namespace gocn {

// Dense 64-bit matrix, row-major. Scalars travel as 1x1 matrices.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace tensor {

class Tape;

namespace detail {

struct Node {
  Mat value;
  Mat grad;                 // allocated lazily during the reverse sweep
  bool has_grad = false;
  bool requires_grad = false;
  Tape* tape = nullptr;     // null for constants
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backprop;
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

// Handle to a matrix value, optionally recorded on a tape. Values are
// immutable once produced; copying a Value copies the handle only.
class Value {
 public:
  Value() = default;

  static Value constant(Mat m);
  static Value scalar(double s);  // 1x1 constant

  const Mat& value() const;
  // Gradient accumulated by Tape::grad. Throws if none was produced.
  const Mat& grad() const;
  bool requires_grad() const;
  bool defined() const { return node_ != nullptr; }
  // The underlying scalar; throws unless the value is 1x1.
  double item() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  explicit Value(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;

  friend class Tape;
  friend Value make_op(Tape*, Mat, std::vector<Value>, std::function<void(detail::Node&)>);
  friend const detail::NodePtr& node_of(const Value& v);
};

// Records a forward computation so gradients can be pulled out by a
// single reverse sweep. One tape serves exactly one forward+backward
// pass; recording or differentiating after grad() throws.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf.
  Value var(Mat m);

  // Reverse sweep from a recorded 1x1 output. Returns d(output)/d(input)
  // for each input, in order; inputs never reached by the sweep get zero
  // gradients. Consumes the tape.
  std::vector<Mat> grad(const Value& output, const std::vector<Value>& inputs);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<detail::NodePtr> nodes_;
  bool consumed_ = false;

  void record(const detail::NodePtr& n);
  friend Value make_op(Tape*, Mat, std::vector<Value>, std::function<void(detail::Node&)>);
};

// ---- primitives ------------------------------------------------------
// Each primitive checks shapes (throwing DimensionError naming both
// shapes), computes its value, and registers its adjoint when any
// operand requires gradients.

Value matmul(const Value& a, const Value& b);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value transpose(const Value& a);
Value hadamard(const Value& a, const Value& b);
// max(x, 0); the subgradient at exactly 0 is 0.
Value relu(const Value& a);
Value row_softmax(const Value& a);
Value frobenius_norm_sq(const Value& a);     // 1x1
// Tr(z^T m z) for z (n x d), m (n x n).    // 1x1
Value trace_quadratic(const Value& z, const Value& m);
Value sum_all(const Value& a);               // 1x1

// alpha*(a b) + beta*c, fused so the propagation recurrence records one
// node per step.
Value gemm_add(double alpha, const Value& a, const Value& b, double beta, const Value& c);
// relu(base + coef * z z^T), fused; stores only its output, so a
// propagation sweep keeps one n x n matrix per iteration.
Value sym_outer_relu(const Value& base, const Value& z, double coef);

// Scalar (1x1) helpers used by the multi-graph weight update.
Value scalar_mul(const Value& s, const Value& m);   // s is 1x1
Value pow_scalar(const Value& s, double p);         // s is 1x1, strictly positive
Value reciprocal(const Value& s);                   // s is 1x1, nonzero
Value clamp_min_scalar(const Value& s, double lo);  // s is 1x1

// Sum over `rows` of -ln(max(p[i, label[i]], floor)). Probabilities at
// or below the floor contribute a constant and no gradient.
Value masked_nll(const Value& probs, const std::vector<int>& labels,
                 const std::vector<int>& rows, double floor = 1e-12);

// Inverted dropout: zeroes entries with probability `rate` and scales
// the survivors by 1/(1-rate).
Value dropout(const Value& a, double rate, Rng& rng);

}  // namespace tensor
}  // namespace gocn
