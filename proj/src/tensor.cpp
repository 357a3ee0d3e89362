#include "gocn/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace gocn::tensor {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

std::string shape_str(const Value& v) { return shape_str(v.value()); }

void require_defined(const Value& v, const char* op) {
  if (!v.defined()) throw TapeError(std::string(op) + ": undefined Value");
}

void require_scalar(const Value& v, const char* op) {
  if (v.rows() != 1 || v.cols() != 1)
    throw DimensionError(std::string(op) + ": expected 1x1 scalar, got " + shape_str(v));
}

// Accumulate into a parent's gradient; parents that do not require
// gradients are skipped entirely.
template <typename Expr>
void accum(detail::Node& dst, const Expr& g) {
  if (!dst.requires_grad) return;
  if (dst.has_grad) {
    dst.grad += g;
  } else {
    dst.grad = g;
    dst.has_grad = true;
  }
}

bool wants_grad(const detail::Node& n) { return n.requires_grad; }

}  // namespace

const detail::NodePtr& node_of(const Value& v) { return v.node_; }

Value Value::constant(Mat m) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(m);
  return Value(std::move(n));
}

Value Value::scalar(double s) {
  Mat m(1, 1);
  m(0, 0) = s;
  return constant(std::move(m));
}

const Mat& Value::value() const {
  if (!node_) throw TapeError("Value::value: undefined Value");
  return node_->value;
}

const Mat& Value::grad() const {
  if (!node_) throw TapeError("Value::grad: undefined Value");
  if (!node_->has_grad) throw TapeError("Value::grad: no gradient was accumulated");
  return node_->grad;
}

bool Value::requires_grad() const { return node_ && node_->requires_grad; }

double Value::item() const {
  const Mat& m = value();
  if (m.rows() != 1 || m.cols() != 1)
    throw DimensionError("Value::item: expected 1x1 scalar, got " + shape_str(m));
  return m(0, 0);
}

Value Tape::var(Mat m) {
  if (consumed_) throw TapeError("Tape::var: tape already consumed by a backward pass");
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(m);
  n->requires_grad = true;
  n->tape = this;
  nodes_.push_back(n);
  return Value(n);
}

void Tape::record(const detail::NodePtr& n) {
  if (consumed_) throw TapeError("Tape::record: tape already consumed by a backward pass");
  nodes_.push_back(n);
}

std::vector<Mat> Tape::grad(const Value& output, const std::vector<Value>& inputs) {
  if (consumed_) throw TapeError("Tape::grad: tape already consumed by a backward pass");
  require_defined(output, "Tape::grad");
  require_scalar(output, "Tape::grad (output)");
  const detail::NodePtr& out = node_of(output);
  if (out->tape != this)
    throw TapeError("Tape::grad: output was not recorded on this tape");
  consumed_ = true;

  out->grad = Mat::Ones(1, 1);
  out->has_grad = true;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    if (n.has_grad && n.backprop) n.backprop(n);
  }

  std::vector<Mat> grads;
  grads.reserve(inputs.size());
  for (const Value& in : inputs) {
    require_defined(in, "Tape::grad (input)");
    const detail::NodePtr& node = node_of(in);
    if (!node->requires_grad)
      throw TapeError("Tape::grad: input was not marked differentiable");
    if (node->has_grad) {
      grads.push_back(node->grad);
    } else {
      grads.push_back(Mat::Zero(node->value.rows(), node->value.cols()));
    }
  }

  // Break parent links so intermediate values are freed as soon as
  // outside handles go away.
  for (auto& n : nodes_) {
    n->backprop = nullptr;
    n->parents.clear();
  }
  nodes_.clear();
  return grads;
}

// Builds an op node: value + parents + adjoint. When no parent requires
// gradients the parents and adjoint are dropped, so untaped computation
// carries no recording overhead and frees intermediates eagerly.
Value make_op(Tape* tape_hint, Mat value, std::vector<Value> parents,
              std::function<void(detail::Node&)> backprop) {
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);

  Tape* tape = tape_hint;
  bool needs = false;
  for (const Value& p : parents) {
    if (!p.requires_grad()) continue;
    needs = true;
    Tape* pt = node_of(p)->tape;
    if (tape == nullptr) tape = pt;
    if (pt != nullptr && pt != tape)
      throw TapeError("operands were recorded on different tapes");
  }
  if (needs) {
    n->requires_grad = true;
    n->tape = tape;
    n->parents.reserve(parents.size());
    for (Value& p : parents) n->parents.push_back(node_of(p));
    n->backprop = std::move(backprop);
    if (tape != nullptr) tape->record(n);
  }
  return Value(std::move(n));
}

namespace {

Value unary_op(const Value& a, Mat value, std::function<void(detail::Node&)> backprop) {
  return make_op(nullptr, std::move(value), {a}, std::move(backprop));
}

Value binary_op(const Value& a, const Value& b, Mat value,
                std::function<void(detail::Node&)> backprop) {
  return make_op(nullptr, std::move(value), {a, b}, std::move(backprop));
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a) + " vs " + shape_str(b));
  Mat out = a.value() * b.value();
  return binary_op(a, b, std::move(out), [](detail::Node& n) {
    detail::Node& pa = *n.parents[0];
    detail::Node& pb = *n.parents[1];
    if (wants_grad(pa)) accum(pa, n.grad * pb.value.transpose());
    if (wants_grad(pb)) accum(pb, pa.value.transpose() * n.grad);
  });
}

Value add(const Value& a, const Value& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("add: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
  Mat out = a.value() + b.value();
  return binary_op(a, b, std::move(out), [](detail::Node& n) {
    accum(*n.parents[0], n.grad);
    accum(*n.parents[1], n.grad);
  });
}

Value sub(const Value& a, const Value& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("sub: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
  Mat out = a.value() - b.value();
  return binary_op(a, b, std::move(out), [](detail::Node& n) {
    accum(*n.parents[0], n.grad);
    accum(*n.parents[1], -n.grad);
  });
}

Value scale(const Value& a, double s) {
  require_defined(a, "scale");
  Mat out = s * a.value();
  return unary_op(a, std::move(out), [s](detail::Node& n) {
    accum(*n.parents[0], s * n.grad);
  });
}

Value transpose(const Value& a) {
  require_defined(a, "transpose");
  Mat out = a.value().transpose();
  return unary_op(a, std::move(out), [](detail::Node& n) {
    accum(*n.parents[0], n.grad.transpose());
  });
}

Value hadamard(const Value& a, const Value& b) {
  require_defined(a, "hadamard");
  require_defined(b, "hadamard");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("hadamard: shapes differ, " + shape_str(a) + " vs " + shape_str(b));
  Mat out = a.value().cwiseProduct(b.value());
  return binary_op(a, b, std::move(out), [](detail::Node& n) {
    detail::Node& pa = *n.parents[0];
    detail::Node& pb = *n.parents[1];
    if (wants_grad(pa)) accum(pa, n.grad.cwiseProduct(pb.value));
    if (wants_grad(pb)) accum(pb, n.grad.cwiseProduct(pa.value));
  });
}

Value relu(const Value& a) {
  require_defined(a, "relu");
  Mat out = a.value().cwiseMax(0.0);
  return unary_op(a, std::move(out), [](detail::Node& n) {
    detail::Node& pa = *n.parents[0];
    // Gradient passes where the input was strictly positive.
    accum(pa, (pa.value.array() > 0.0).select(n.grad, Mat::Zero(n.grad.rows(), n.grad.cols())));
  });
}

Value row_softmax(const Value& a) {
  require_defined(a, "row_softmax");
  if (a.cols() < 1) throw DimensionError("row_softmax: needs at least one column");
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return unary_op(a, std::move(out), [](detail::Node& n) {
    detail::Node& pa = *n.parents[0];
    if (!wants_grad(pa)) return;
    // d in_i = (d out_i - <d out_i, out_i>) .* out_i per row
    Mat g(n.grad.rows(), n.grad.cols());
    for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
      const double dot = n.grad.row(i).dot(n.value.row(i));
      g.row(i) = (n.grad.row(i).array() - dot) * n.value.row(i).array();
    }
    accum(pa, g);
  });
}

Value frobenius_norm_sq(const Value& a) {
  require_defined(a, "frobenius_norm_sq");
  Mat out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return unary_op(a, std::move(out), [](detail::Node& n) {
    accum(*n.parents[0], (2.0 * n.grad(0, 0)) * n.parents[0]->value);
  });
}

Value trace_quadratic(const Value& z, const Value& m) {
  require_defined(z, "trace_quadratic");
  require_defined(m, "trace_quadratic");
  if (m.rows() != m.cols())
    throw DimensionError("trace_quadratic: m must be square, got " + shape_str(m));
  if (m.cols() != z.rows())
    throw DimensionError("trace_quadratic: m " + shape_str(m) + " does not match z " + shape_str(z));
  Mat mz = m.value() * z.value();
  Mat out(1, 1);
  out(0, 0) = z.value().cwiseProduct(mz).sum();
  return binary_op(z, m, std::move(out), [](detail::Node& n) {
    detail::Node& pz = *n.parents[0];
    detail::Node& pm = *n.parents[1];
    const double g = n.grad(0, 0);
    if (wants_grad(pz))
      accum(pz, g * ((pm.value + pm.value.transpose()) * pz.value));
    if (wants_grad(pm)) accum(pm, g * (pz.value * pz.value.transpose()));
  });
}

Value sum_all(const Value& a) {
  require_defined(a, "sum_all");
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return unary_op(a, std::move(out), [](detail::Node& n) {
    detail::Node& pa = *n.parents[0];
    accum(pa, Mat::Constant(pa.value.rows(), pa.value.cols(), n.grad(0, 0)));
  });
}

Value gemm_add(double alpha, const Value& a, const Value& b, double beta, const Value& c) {
  require_defined(a, "gemm_add");
  require_defined(b, "gemm_add");
  require_defined(c, "gemm_add");
  if (a.cols() != b.rows())
    throw DimensionError("gemm_add: inner dimensions differ, " + shape_str(a) + " vs " + shape_str(b));
  if (c.rows() != a.rows() || c.cols() != b.cols())
    throw DimensionError("gemm_add: addend is " + shape_str(c) + ", product is " +
                         std::to_string(a.rows()) + "x" + std::to_string(b.cols()));
  Mat out(a.rows(), b.cols());
  out.noalias() = alpha * (a.value() * b.value());
  out += beta * c.value();
  return make_op(nullptr, std::move(out), {a, b, c}, [alpha, beta](detail::Node& n) {
    detail::Node& pa = *n.parents[0];
    detail::Node& pb = *n.parents[1];
    detail::Node& pc = *n.parents[2];
    if (wants_grad(pa)) accum(pa, alpha * (n.grad * pb.value.transpose()));
    if (wants_grad(pb)) accum(pb, alpha * (pa.value.transpose() * n.grad));
    if (wants_grad(pc)) accum(pc, beta * n.grad);
  });
}

Value sym_outer_relu(const Value& base, const Value& z, double coef) {
  require_defined(base, "sym_outer_relu");
  require_defined(z, "sym_outer_relu");
  if (base.rows() != base.cols())
    throw DimensionError("sym_outer_relu: base must be square, got " + shape_str(base));
  if (z.rows() != base.rows())
    throw DimensionError("sym_outer_relu: z is " + shape_str(z) + ", base is " + shape_str(base));
  Mat out(base.rows(), base.cols());
  out.noalias() = coef * (z.value() * z.value().transpose());
  out += base.value();
  out = out.cwiseMax(0.0);
  return binary_op(base, z, std::move(out), [coef](detail::Node& n) {
    detail::Node& pbase = *n.parents[0];
    detail::Node& pz = *n.parents[1];
    // The output is max(pre, 0); pre > 0 exactly where the output is > 0.
    Mat masked = (n.value.array() > 0.0).select(n.grad, Mat::Zero(n.grad.rows(), n.grad.cols()));
    if (wants_grad(pbase)) accum(pbase, masked);
    if (wants_grad(pz))
      accum(pz, coef * ((masked + masked.transpose()) * pz.value));
  });
}

Value scalar_mul(const Value& s, const Value& m) {
  require_defined(s, "scalar_mul");
  require_defined(m, "scalar_mul");
  require_scalar(s, "scalar_mul");
  Mat out = s.item() * m.value();
  return binary_op(s, m, std::move(out), [](detail::Node& n) {
    detail::Node& ps = *n.parents[0];
    detail::Node& pm = *n.parents[1];
    if (wants_grad(ps)) {
      Mat g(1, 1);
      g(0, 0) = n.grad.cwiseProduct(pm.value).sum();
      accum(ps, g);
    }
    if (wants_grad(pm)) accum(pm, ps.value(0, 0) * n.grad);
  });
}

Value pow_scalar(const Value& s, double p) {
  require_defined(s, "pow_scalar");
  require_scalar(s, "pow_scalar");
  const double x = s.item();
  if (!(x > 0.0))
    throw NumericError("pow_scalar: base must be strictly positive, got " + std::to_string(x));
  Mat out(1, 1);
  out(0, 0) = std::pow(x, p);
  return unary_op(s, std::move(out), [p](detail::Node& n) {
    const double x = n.parents[0]->value(0, 0);
    Mat g(1, 1);
    g(0, 0) = n.grad(0, 0) * p * std::pow(x, p - 1.0);
    accum(*n.parents[0], g);
  });
}

Value reciprocal(const Value& s) {
  require_defined(s, "reciprocal");
  require_scalar(s, "reciprocal");
  const double x = s.item();
  if (x == 0.0) throw NumericError("reciprocal: division by zero");
  Mat out(1, 1);
  out(0, 0) = 1.0 / x;
  return unary_op(s, std::move(out), [](detail::Node& n) {
    const double x = n.parents[0]->value(0, 0);
    Mat g(1, 1);
    g(0, 0) = -n.grad(0, 0) / (x * x);
    accum(*n.parents[0], g);
  });
}

Value clamp_min_scalar(const Value& s, double lo) {
  require_defined(s, "clamp_min_scalar");
  require_scalar(s, "clamp_min_scalar");
  Mat out(1, 1);
  out(0, 0) = std::max(s.item(), lo);
  return unary_op(s, std::move(out), [lo](detail::Node& n) {
    const double x = n.parents[0]->value(0, 0);
    Mat g(1, 1);
    g(0, 0) = x > lo ? n.grad(0, 0) : 0.0;
    accum(*n.parents[0], g);
  });
}

Value masked_nll(const Value& probs, const std::vector<int>& labels,
                 const std::vector<int>& rows, double floor) {
  require_defined(probs, "masked_nll");
  if (rows.empty()) throw DimensionError("masked_nll: empty label set");
  const Mat& p = probs.value();
  if (static_cast<Eigen::Index>(labels.size()) != p.rows())
    throw DimensionError("masked_nll: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(probs) + " probabilities");
  double loss = 0.0;
  for (int i : rows) {
    if (i < 0 || i >= p.rows())
      throw DimensionError("masked_nll: row " + std::to_string(i) + " out of range");
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= p.cols())
      throw DimensionError("masked_nll: label " + std::to_string(y) + " out of range");
    loss -= std::log(std::max(p(i, y), floor));
  }
  Mat out(1, 1);
  out(0, 0) = loss;
  return unary_op(probs, std::move(out), [labels, rows, floor](detail::Node& n) {
    detail::Node& pp = *n.parents[0];
    if (!wants_grad(pp)) return;
    const double g = n.grad(0, 0);
    Mat dp = Mat::Zero(pp.value.rows(), pp.value.cols());
    for (int i : rows) {
      const int y = labels[static_cast<std::size_t>(i)];
      const double v = pp.value(i, y);
      if (v > floor) dp(i, y) -= g / v;
    }
    accum(pp, dp);
  });
}

Value dropout(const Value& a, double rate, Rng& rng) {
  require_defined(a, "dropout");
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (rate == 0.0) return a;
  const double keep = 1.0 - rate;
  Mat mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  Mat out = a.value().cwiseProduct(mask);
  return unary_op(a, std::move(out), [mask](detail::Node& n) {
    accum(*n.parents[0], n.grad.cwiseProduct(mask));
  });
}

}  // namespace gocn::tensor
