#ifndef TWIST_GRADCHECK_HPP_
#define TWIST_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <string>

#include "twist/tape.hpp"

namespace twist {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;

  bool ok(double tol) const { return max_rel_err < tol; }
};

// Compares the analytic gradient of a scalar function against central finite
// differences, everything in 64-bit. f is called as f(tape, x_var) and must
// be deterministic across calls (re-seed any internal sampling).
//
// Relative error per entry: |a - n| / max(|a|, |n|, 1).
template <typename F>
GradCheckReport grad_check(F f, const MatD& x0, double h = 1e-4) {
  GradCheckReport rep;

  Tape<double> tape;
  Var<double> x = tape.leaf(x0, true);
  Var<double> loss = f(tape, x);
  require(loss.value().size() == 1, ErrorKind::dimension,
          "grad_check: f must return a scalar");
  require(std::isfinite(loss.scalar()), ErrorKind::data,
          "grad_check: non-finite f(x)");
  tape.backward(loss);
  MatD analytic = tape.grad(x);

  MatD xp = x0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    for (Eigen::Index j = 0; j < x0.cols(); ++j) {
      xp(i, j) = x0(i, j) + h;
      Tape<double> t1;
      double fp = f(t1, t1.leaf(xp, false)).scalar();
      xp(i, j) = x0(i, j) - h;
      Tape<double> t2;
      double fm = f(t2, t2.leaf(xp, false)).scalar();
      xp(i, j) = x0(i, j);
      require(std::isfinite(fp) && std::isfinite(fm), ErrorKind::data,
              "grad_check: non-finite f at perturbed point");
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic(i, j);
      double abs_err = std::abs(a - numeric);
      double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1.0});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_row = i;
        rep.worst_col = j;
        rep.analytic_at_worst = a;
        rep.numeric_at_worst = numeric;
      }
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    }
  }
  return rep;
}

// Checks analytic parameter gradients of a loss against central finite
// differences over every entry of every non-frozen parameter in the set.
// eval_loss(true) must run forward+backward and leave gradients in the set;
// eval_loss(false) only needs the forward value. The loss must be
// deterministic across calls.
inline GradCheckReport param_grad_check(
    const std::function<double(bool)>& eval_loss, ParameterSet<double>& ps,
    double h = 1e-4) {
  GradCheckReport rep;
  ps.zero_grads();
  double f0 = eval_loss(true);
  require(std::isfinite(f0), ErrorKind::data,
          "param_grad_check: non-finite loss");
  for (auto& p : ps) {
    if (p->frozen) continue;
    MatD analytic = p->grad.size() > 0
                        ? p->grad
                        : MatD::Zero(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        double orig = p->value(i, j);
        p->value(i, j) = orig + h;
        double fp = eval_loss(false);
        p->value(i, j) = orig - h;
        double fm = eval_loss(false);
        p->value(i, j) = orig;
        double numeric = (fp - fm) / (2.0 * h);
        double a = analytic(i, j);
        double abs_err = std::abs(a - numeric);
        double rel =
            abs_err / std::max({std::abs(a), std::abs(numeric), 1.0});
        if (rel > rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst_row = i;
          rep.worst_col = j;
          rep.analytic_at_worst = a;
          rep.numeric_at_worst = numeric;
        }
        rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      }
    }
  }
  return rep;
}

}  // namespace twist

#endif  // TWIST_GRADCHECK_HPP_
