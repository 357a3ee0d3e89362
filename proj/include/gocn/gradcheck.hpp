#pragma once

#include <functional>
#include <vector>

#include "gocn/tensor.hpp"

namespace gocn::tensor {

struct GradCheckReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_row = -1;
  Eigen::Index worst_col = -1;
  double tape_grad_at_worst = 0.0;
  double fd_grad_at_worst = 0.0;
  bool pass = false;
};

// A scalar-valued computation expressible on a tape. The same callable
// is re-evaluated on perturbed constants for the finite differences, so
// it must be deterministic given its input.
using ScalarFn = std::function<Value(Tape&, const Value&)>;
using MultiScalarFn = std::function<Value(Tape&, const std::vector<Value>&)>;

// Compares the tape gradient of f at x against central finite
// differences (f(x+eps e_ij) - f(x-eps e_ij)) / 2 eps, entry by entry.
GradCheckReport finite_diff_check(const ScalarFn& f, const Mat& x, double step,
                                  double tolerance);

// Multi-input variant: the tape gradient is computed once; finite
// differences perturb one input at a time. Returns one report per input.
std::vector<GradCheckReport> finite_diff_check(const MultiScalarFn& f,
                                               const std::vector<Mat>& xs,
                                               double step, double tolerance);

}  // namespace gocn::tensor
