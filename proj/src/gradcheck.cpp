#include "gocn/gradcheck.hpp"

#include <cmath>

namespace gocn::tensor {

namespace {

double rel_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return std::abs(a - b) / std::max(scale, 1e-6);
}

void fold_entry(GradCheckReport& rep, Eigen::Index i, Eigen::Index j, double tape_g,
                double fd_g) {
  const double err = rel_error(tape_g, fd_g);
  if (err >= rep.max_rel_error) {
    rep.max_rel_error = err;
    rep.worst_row = i;
    rep.worst_col = j;
    rep.tape_grad_at_worst = tape_g;
    rep.fd_grad_at_worst = fd_g;
  }
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFn& f, const Mat& x, double step,
                                  double tolerance) {
  MultiScalarFn wrapped = [&f](Tape& tape, const std::vector<Value>& xs) {
    return f(tape, xs[0]);
  };
  return finite_diff_check(wrapped, {x}, step, tolerance)[0];
}

std::vector<GradCheckReport> finite_diff_check(const MultiScalarFn& f,
                                               const std::vector<Mat>& xs,
                                               double step, double tolerance) {
  // Tape gradients at the base point.
  std::vector<Mat> tape_grads;
  {
    Tape tape;
    std::vector<Value> vars;
    vars.reserve(xs.size());
    for (const Mat& x : xs) vars.push_back(tape.var(x));
    Value out = f(tape, vars);
    tape_grads = tape.grad(out, vars);
  }

  auto eval = [&f](const std::vector<Mat>& points) {
    Tape tape;  // nothing ends up recorded: all inputs are constants
    std::vector<Value> consts;
    consts.reserve(points.size());
    for (const Mat& p : points) consts.push_back(Value::constant(p));
    return f(tape, consts).item();
  };

  std::vector<GradCheckReport> reports(xs.size());
  std::vector<Mat> work = xs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    GradCheckReport& rep = reports[k];
    rep.max_rel_error = 0.0;
    for (Eigen::Index i = 0; i < xs[k].rows(); ++i) {
      for (Eigen::Index j = 0; j < xs[k].cols(); ++j) {
        const double orig = work[k](i, j);
        work[k](i, j) = orig + step;
        const double fplus = eval(work);
        work[k](i, j) = orig - step;
        const double fminus = eval(work);
        work[k](i, j) = orig;
        const double fd = (fplus - fminus) / (2.0 * step);
        fold_entry(rep, i, j, tape_grads[k](i, j), fd);
      }
    }
    rep.pass = rep.max_rel_error <= tolerance;
  }
  return reports;
}

}  // namespace gocn::tensor
