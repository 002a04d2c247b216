#ifndef TWIST_DISTRIBUTIONS_HPP_
#define TWIST_DISTRIBUTIONS_HPP_

#include <cmath>
#include <vector>

#include "twist/tape.hpp"

namespace twist {

// Probability floor used inside log terms so saturated logits cannot produce
// -inf. Applied as a clamp on log-probabilities at ln(1e-8).
inline constexpr double kLogProbFloor = -18.420680743952367;

// Grouped categorical over logits [rows, G*K]: G independent groups of K
// classes per row. Shapes carry (G, K) at the call sites; the tape only sees
// the flat layout.

// One-hot straight-through sample. Forward draws exactly one class per group
// by inverse CDF; backward routes gradients as if the sample were the softmax
// probability vector.
template <typename S>
Var<S> sample_straight_through(Var<S> logits, Eigen::Index k, Rng& rng) {
  Tape<S>& t = *logits.tape;
  require(k >= 2 && logits.cols() % k == 0, ErrorKind::dimension,
          "sample_straight_through: columns not divisible by class count");
  require(logits.value().allFinite(), ErrorKind::distribution,
          "sample_straight_through: non-finite logits");
  Mat<S> p = detail::softmax_groups_value(logits.value(), k);
  Mat<S> y = Mat<S>::Zero(p.rows(), p.cols());
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    for (Eigen::Index g0 = 0; g0 < p.cols(); g0 += k) {
      S u = static_cast<S>(rng.uniform());
      S acc = S(0);
      Eigen::Index pick = g0 + k - 1;
      for (Eigen::Index j = 0; j < k; ++j) {
        acc += p(r, g0 + j);
        if (u < acc) {
          pick = g0 + j;
          break;
        }
      }
      y(r, pick) = S(1);
    }
  }
  bool ng = t.needs_grad(logits.id);
  int ai = logits.id;
  return t.make(
      std::move(y), ng,
      !ng ? typename Tape<S>::BackFn(nullptr)
          : [ai, k](Tape<S>& tp, int, const Mat<S>& g) {
              // same Jacobian as softmax(logits)
              Mat<S> p = detail::softmax_groups_value(tp.value(ai), k);
              Mat<S> dx(p.rows(), p.cols());
              for (Eigen::Index g0 = 0; g0 < p.cols(); g0 += k) {
                auto pb = p.middleCols(g0, k).array();
                auto gb = g.middleCols(g0, k).array();
                Eigen::Array<S, Eigen::Dynamic, 1> dot =
                    (gb * pb).rowwise().sum();
                dx.middleCols(g0, k) = (pb * (gb.colwise() - dot)).matrix();
              }
              tp.accum(ai, dx);
            });
}

// KL[q || p] per row, summed over groups -> [rows, 1]. Closed form from
// log-softmax; differentiable w.r.t. both logit sets (freeze the teacher side
// at the call site via stop_grad/param(trainable=false)).
template <typename S>
Var<S> kl_grouped(Var<S> q_logits, Var<S> p_logits, Eigen::Index k) {
  detail::check_same_tape(q_logits, p_logits, "kl_grouped");
  require(q_logits.rows() == p_logits.rows() &&
              q_logits.cols() == p_logits.cols(),
          ErrorKind::dimension, "kl_grouped: shape mismatch");
  Var<S> lq = log_softmax_groups(q_logits, k);
  Var<S> lp = log_softmax_groups(p_logits, k);
  Var<S> lq_f = clamp(lq, S(kLogProbFloor), S(0));
  Var<S> lp_f = clamp(lp, S(kLogProbFloor), S(0));
  Var<S> q = exp(lq);
  return rowsum(mul(q, sub(lq_f, lp_f)));
}

// Shannon entropy per row in nats, summed over groups -> [rows, 1].
template <typename S>
Var<S> entropy_grouped(Var<S> logits, Eigen::Index k) {
  Var<S> lp = log_softmax_groups(logits, k);
  Var<S> lp_f = clamp(lp, S(kLogProbFloor), S(0));
  Var<S> p = exp(lp);
  return neg(rowsum(mul(p, lp_f)));
}

// Diagonal Gaussian log density, summed over feature columns -> [rows, 1].
// log_std may be a var of matching shape or a fixed scalar captured in the
// unit-variance overload below.
template <typename S>
Var<S> gaussian_log_prob(Var<S> mean, Var<S> log_std, Var<S> x) {
  detail::check_same_tape(mean, x, "gaussian_log_prob");
  require(mean.rows() == x.rows() && mean.cols() == x.cols(),
          ErrorKind::dimension, "gaussian_log_prob: shape mismatch");
  require(log_std.value().allFinite(), ErrorKind::distribution,
          "gaussian_log_prob: non-finite log_std");
  Tape<S>& t = *mean.tape;
  const S kHalfLog2Pi = S(0.5 * std::log(2.0 * M_PI));
  Var<S> z = mul(sub(x, mean), exp(neg(log_std)));
  Var<S> per_dim = add(add(affine(square(z), S(0.5), S(0)), log_std),
                       t.scalar(kHalfLog2Pi));
  return neg(rowsum(per_dim));
}

// Unit-variance case used by the reconstruction and reward heads.
template <typename S>
Var<S> gaussian_log_prob_unit(Var<S> mean, Var<S> x) {
  Tape<S>& t = *mean.tape;
  const S kHalfLog2Pi = S(0.5 * std::log(2.0 * M_PI));
  Var<S> d = sub(x, mean);
  Var<S> per_dim = add(affine(square(d), S(0.5), S(0)), t.scalar(kHalfLog2Pi));
  return neg(rowsum(per_dim));
}

// Entropy of a diagonal Gaussian with the given log-stds -> [rows, 1].
template <typename S>
Var<S> gaussian_entropy(Var<S> log_std) {
  const S c = S(0.5 * std::log(2.0 * M_PI) + 0.5);
  return rowsum(affine(log_std, S(1), c));
}

}  // namespace twist

#endif  // TWIST_DISTRIBUTIONS_HPP_
