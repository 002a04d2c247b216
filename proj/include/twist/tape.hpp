#ifndef TWIST_TAPE_HPP_
#define TWIST_TAPE_HPP_

#include <cmath>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "twist/common.hpp"
#include "twist/params.hpp"

namespace twist {

template <typename S>
class Tape;

// Handle to a node on a tape. Cheap to copy; owns nothing.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
};

// Reverse-mode tape. Op functions append nodes in topological order;
// backward() walks them in reverse, handing each node its id and output
// gradient. One graph per tape, one thread per graph.
template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape<S>&, int self, const Mat<S>&)>;

  Var<S> constant(Mat<S> v) { return make(std::move(v), false, nullptr); }

  Var<S> scalar(S v) { return constant(Mat<S>::Constant(1, 1, v)); }

  Var<S> leaf(Mat<S> v, bool needs_grad) {
    return make(std::move(v), needs_grad, nullptr);
  }

  // Exposes a persistent parameter as a graph leaf. With trainable=false the
  // value participates in the forward pass but accumulates no gradient
  // (frozen teachers, cross-module isolation).
  Var<S> param(Parameter<S>& p, bool trainable = true) {
    bool ng = trainable && !p.frozen;
    Var<S> v = make(p.value, ng, nullptr);
    if (ng) param_nodes_.emplace_back(v.id, &p);
    return v;
  }

  const Mat<S>& value(int id) const { return nodes_[id].value; }

  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }

  // Zero matrix of the node's shape if no gradient reached it.
  Mat<S> grad(const Var<S>& v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() > 0) return n.grad;
    return Mat<S>::Zero(n.value.rows(), n.value.cols());
  }

  // Backpropagates from a scalar loss node, then folds leaf gradients into
  // their parameters' grad accumulators.
  void backward(Var<S> loss) {
    require(loss.valid() && loss.tape == this, ErrorKind::contract,
            "backward: loss var does not belong to this tape");
    require(nodes_[loss.id].value.size() == 1, ErrorKind::dimension,
            "backward: loss must be a 1x1 scalar");
    accum_raw(loss.id, Mat<S>::Ones(1, 1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() > 0) n.backward(*this, i, n.grad);
    }
    for (auto& [id, p] : param_nodes_) {
      Node& n = nodes_[id];
      if (n.grad.size() == 0) continue;
      if (p->grad.size() == 0)
        p->grad = n.grad;
      else
        p->grad += n.grad;
    }
  }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
  }

  size_t size() const { return nodes_.size(); }

  // --- used by op implementations ---

  Var<S> make(Mat<S> value, bool needs_grad, BackFn backward) {
    nodes_.push_back(
        Node{std::move(value), Mat<S>(), std::move(backward), needs_grad});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  template <typename D>
  void accum(int id, const Eigen::MatrixBase<D>& g) {
    if (!nodes_[id].needs_grad) return;
    accum_raw(id, g);
  }

  // Accumulate into a column block (slice backward).
  template <typename D>
  void accum_cols(int id, Eigen::Index col0, const Eigen::MatrixBase<D>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    n.grad.middleCols(col0, g.cols()) += g;
  }

  // Accumulate into a row block (row-slice backward).
  template <typename D>
  void accum_rows(int id, Eigen::Index row0, const Eigen::MatrixBase<D>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    n.grad.middleRows(row0, g.rows()) += g;
  }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    BackFn backward;
    bool needs_grad = false;
  };

  template <typename D>
  void accum_raw(int id, const Eigen::MatrixBase<D>& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter<S>*>> param_nodes_;
};

namespace detail {

template <typename S>
inline bool any_grad(std::initializer_list<Var<S>> vs) {
  for (const auto& v : vs)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}

template <typename S>
inline void check_same_tape(Var<S> a, Var<S> b, const char* op) {
  require(a.valid() && b.valid() && a.tape == b.tape, ErrorKind::contract,
          std::string(op) + ": operands on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops. Shapes are [rows, cols]; rows index batch entries. Values
// are computed eagerly; backward closures capture input node ids only and
// read values back off the tape.
// ---------------------------------------------------------------------------

// a + b: same shape, or b a 1xC row (bias broadcast over rows), or b 1x1.
template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b, "add");
  Tape<S>& t = *a.tape;
  const Mat<S>&av = a.value(), &bv = b.value();
  Mat<S> y;
  bool bias = false, scalar_b = false;
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    y = av + bv;
  } else if (bv.size() == 1) {
    scalar_b = true;
    y = av.array() + bv(0, 0);
  } else if (bv.rows() == 1 && bv.cols() == av.cols()) {
    bias = true;
    y = av.rowwise() + bv.row(0);
  } else {
    fail(ErrorKind::dimension, "add: incompatible shapes");
  }
  bool ng = detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, bi, bias, scalar_b](Tape<S>& tp, int,
                                               const Mat<S>& g) {
                        tp.accum(ai, g);
                        if (scalar_b)
                          tp.accum(bi, Mat<S>::Constant(1, 1, g.sum()));
                        else if (bias)
                          tp.accum(bi, g.colwise().sum());
                        else
                          tp.accum(bi, g);
                      });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b, "sub");
  Tape<S>& t = *a.tape;
  const Mat<S>&av = a.value(), &bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(),
          ErrorKind::dimension, "sub: shape mismatch");
  bool ng = detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return t.make(av - bv, ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, bi](Tape<S>& tp, int, const Mat<S>& g) {
                        tp.accum(ai, g);
                        tp.accum(bi, -g);
                      });
}

// Elementwise product: same shape, or b an Rx1 column (per-row scale), or b
// 1x1 (scalar scale).
template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b, "mul");
  Tape<S>& t = *a.tape;
  const Mat<S>&av = a.value(), &bv = b.value();
  Mat<S> y;
  bool colb = false, scalar_b = false;
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    y = av.cwiseProduct(bv);
  } else if (bv.size() == 1) {
    scalar_b = true;
    y = av * bv(0, 0);
  } else if (bv.cols() == 1 && bv.rows() == av.rows()) {
    colb = true;
    y = (av.array().colwise() * bv.col(0).array()).matrix();
  } else {
    fail(ErrorKind::dimension, "mul: incompatible shapes");
  }
  bool ng = detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return t.make(
      std::move(y), ng,
      !ng ? typename Tape<S>::BackFn(nullptr)
          : [ai, bi, colb, scalar_b](Tape<S>& tp, int, const Mat<S>& g) {
              const Mat<S>&av = tp.value(ai), &bv = tp.value(bi);
              if (scalar_b) {
                tp.accum(ai, (g * bv(0, 0)).eval());
                tp.accum(bi, Mat<S>::Constant(1, 1, g.cwiseProduct(av).sum()));
              } else if (colb) {
                tp.accum(ai,
                         (g.array().colwise() * bv.col(0).array()).matrix());
                tp.accum(bi, g.cwiseProduct(av).rowwise().sum());
              } else {
                tp.accum(ai, g.cwiseProduct(bv));
                tp.accum(bi, g.cwiseProduct(av));
              }
            });
}

// alpha * a + beta, elementwise with constant coefficients.
template <typename S>
Var<S> affine(Var<S> a, S alpha, S beta) {
  Tape<S>& t = *a.tape;
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make((a.value().array() * alpha + beta).matrix(), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, alpha](Tape<S>& tp, int, const Mat<S>& g) {
                        tp.accum(ai, (g * alpha).eval());
                      });
}

template <typename S>
Var<S> neg(Var<S> a) {
  return affine(a, S(-1), S(0));
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b, "matmul");
  Tape<S>& t = *a.tape;
  require(a.cols() == b.rows(), ErrorKind::dimension,
          "matmul: inner dimensions disagree");
  bool ng = detail::any_grad<S>({a, b});
  int ai = a.id, bi = b.id;
  return t.make(a.value() * b.value(), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, bi](Tape<S>& tp, int, const Mat<S>& g) {
                        tp.accum(ai, g * tp.value(bi).transpose());
                        tp.accum(bi, tp.value(ai).transpose() * g);
                      });
}

template <typename S>
Var<S> elu(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y =
      a.value().unaryExpr([](S x) { return x > S(0) ? x : S(std::expm1(x)); });
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(
      std::move(y), ng,
      !ng ? typename Tape<S>::BackFn(nullptr)
          : [ai](Tape<S>& tp, int self, const Mat<S>& g) {
              // d/dx elu = 1 for x>0 else exp(x) = y+1
              const Mat<S>& y = tp.value(self);
              tp.accum(ai, (g.array() * y.unaryExpr([](S v) {
                                           return v > S(0) ? S(1) : v + S(1);
                                         }).array())
                               .matrix());
            });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y =
      a.value().unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai](Tape<S>& tp, int self, const Mat<S>& g) {
                        const auto& y = tp.value(self).array();
                        tp.accum(ai, (g.array() * y * (S(1) - y)).matrix());
                      });
}

template <typename S>
Var<S> tanh(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.value().array().tanh().matrix();
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai](Tape<S>& tp, int self, const Mat<S>& g) {
                        const auto& y = tp.value(self).array();
                        tp.accum(ai, (g.array() * (S(1) - y * y)).matrix());
                      });
}

template <typename S>
Var<S> exp(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.value().array().exp().matrix();
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai](Tape<S>& tp, int self, const Mat<S>& g) {
                        tp.accum(ai, g.cwiseProduct(tp.value(self)));
                      });
}

// ln(max(a, floor)); gradient is 1/a above the floor and 0 below it.
template <typename S>
Var<S> log_floor(Var<S> a, S floor) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.value().unaryExpr(
      [floor](S x) { return std::log(x > floor ? x : floor); });
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, floor](Tape<S>& tp, int, const Mat<S>& g) {
                        const Mat<S>& x = tp.value(ai);
                        tp.accum(ai, (g.array() * x.unaryExpr([floor](S v) {
                                                     return v > floor
                                                                ? S(1) / v
                                                                : S(0);
                                                   }).array())
                                         .matrix());
                      });
}

template <typename S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  Tape<S>& t = *a.tape;
  Mat<S> y = a.value().cwiseMax(lo).cwiseMin(hi);
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, lo, hi](Tape<S>& tp, int, const Mat<S>& g) {
                        const Mat<S>& x = tp.value(ai);
                        tp.accum(ai, (g.array() *
                                      x.unaryExpr([lo, hi](S v) {
                                         return (v > lo && v < hi) ? S(1)
                                                                   : S(0);
                                       }).array())
                                         .matrix());
                      });
}

template <typename S>
Var<S> square(Var<S> a) {
  Tape<S>& t = *a.tape;
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(a.value().array().square().matrix(), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai](Tape<S>& tp, int, const Mat<S>& g) {
                        tp.accum(ai,
                                 (S(2) * g.array() * tp.value(ai).array())
                                     .matrix());
                      });
}

// Sum of all entries -> 1x1.
template <typename S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(Mat<S>::Constant(1, 1, a.value().sum()), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai](Tape<S>& tp, int, const Mat<S>& g) {
                        const Mat<S>& x = tp.value(ai);
                        tp.accum(ai, Mat<S>::Constant(x.rows(), x.cols(),
                                                      g(0, 0)));
                      });
}

// Mean of all entries -> 1x1.
template <typename S>
Var<S> mean(Var<S> a) {
  Tape<S>& t = *a.tape;
  S n = static_cast<S>(a.value().size());
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(Mat<S>::Constant(1, 1, a.value().sum() / n), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, n](Tape<S>& tp, int, const Mat<S>& g) {
                        const Mat<S>& x = tp.value(ai);
                        tp.accum(ai, Mat<S>::Constant(x.rows(), x.cols(),
                                                      g(0, 0) / n));
                      });
}

// Per-row sum -> Rx1.
template <typename S>
Var<S> rowsum(Var<S> a) {
  Tape<S>& t = *a.tape;
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(a.value().rowwise().sum(), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai](Tape<S>& tp, int, const Mat<S>& g) {
                        const Mat<S>& x = tp.value(ai);
                        tp.accum(ai, (g.col(0).replicate(1, x.cols())).eval());
                      });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), ErrorKind::dimension, "concat_cols: empty input");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  bool ng = false;
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p, "concat_cols");
    require(p.rows() == rows, ErrorKind::dimension,
            "concat_cols: row mismatch");
    cols += p.cols();
    ng = ng || t.needs_grad(p.id);
  }
  Mat<S> y(rows, cols);
  Eigen::Index off = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id);
    widths.push_back(p.cols());
    off += p.cols();
  }
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ids, widths](Tape<S>& tp, int, const Mat<S>& g) {
                        Eigen::Index off = 0;
                        for (size_t i = 0; i < ids.size(); ++i) {
                          tp.accum(ids[i], g.middleCols(off, widths[i]));
                          off += widths[i];
                        }
                      });
}

template <typename S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  return concat_cols(std::vector<Var<S>>{a, b});
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), ErrorKind::dimension, "concat_rows: empty input");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index cols = parts[0].cols(), rows = 0;
  bool ng = false;
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p, "concat_rows");
    require(p.cols() == cols, ErrorKind::dimension,
            "concat_rows: column mismatch");
    rows += p.rows();
    ng = ng || t.needs_grad(p.id);
  }
  Mat<S> y(rows, cols);
  Eigen::Index off = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) {
    y.middleRows(off, p.rows()) = p.value();
    ids.push_back(p.id);
    heights.push_back(p.rows());
    off += p.rows();
  }
  return t.make(std::move(y), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ids, heights](Tape<S>& tp, int, const Mat<S>& g) {
                        Eigen::Index off = 0;
                        for (size_t i = 0; i < ids.size(); ++i) {
                          tp.accum(ids[i], g.middleRows(off, heights[i]));
                          off += heights[i];
                        }
                      });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index row0, Eigen::Index n) {
  Tape<S>& t = *a.tape;
  require(row0 >= 0 && row0 + n <= a.rows(), ErrorKind::dimension,
          "slice_rows: out of range");
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(a.value().middleRows(row0, n), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, row0](Tape<S>& tp, int, const Mat<S>& g) {
                        tp.accum_rows(ai, row0, g);
                      });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index col0, Eigen::Index n) {
  Tape<S>& t = *a.tape;
  require(col0 >= 0 && col0 + n <= a.cols(), ErrorKind::dimension,
          "slice_cols: out of range");
  bool ng = t.needs_grad(a.id);
  int ai = a.id;
  return t.make(a.value().middleCols(col0, n), ng,
                !ng ? typename Tape<S>::BackFn(nullptr)
                    : [ai, col0](Tape<S>& tp, int, const Mat<S>& g) {
                        tp.accum_cols(ai, col0, g);
                      });
}

// Identity forward, no backward edge.
template <typename S>
Var<S> stop_grad(Var<S> a) {
  return a.tape->make(a.value(), false, nullptr);
}

namespace detail {

// Numerically stable per-group softmax/log-softmax over column segments of
// width k. Rows are independent.
template <typename S>
Mat<S> softmax_groups_value(const Mat<S>& x, Eigen::Index k) {
  Mat<S> p(x.rows(), x.cols());
  for (Eigen::Index g0 = 0; g0 < x.cols(); g0 += k) {
    auto xb = x.middleCols(g0, k);
    auto pb = p.middleCols(g0, k);
    Eigen::Array<S, Eigen::Dynamic, 1> m = xb.rowwise().maxCoeff();
    pb = (xb.array().colwise() - m).exp();
    Eigen::Array<S, Eigen::Dynamic, 1> z = pb.rowwise().sum();
    pb = (pb.array().colwise() / z).matrix();
  }
  return p;
}

template <typename S>
Mat<S> log_softmax_groups_value(const Mat<S>& x, Eigen::Index k) {
  Mat<S> y(x.rows(), x.cols());
  for (Eigen::Index g0 = 0; g0 < x.cols(); g0 += k) {
    auto xb = x.middleCols(g0, k);
    auto yb = y.middleCols(g0, k);
    Eigen::Array<S, Eigen::Dynamic, 1> m = xb.rowwise().maxCoeff();
    yb = (xb.array().colwise() - m).matrix();
    Eigen::Array<S, Eigen::Dynamic, 1> lse =
        yb.array().exp().rowwise().sum().log();
    yb = (yb.array().colwise() - lse).matrix();
  }
  return y;
}

}  // namespace detail

// Softmax applied independently to each group of k columns per row.
template <typename S>
Var<S> softmax_groups(Var<S> logits, Eigen::Index k) {
  Tape<S>& t = *logits.tape;
  require(k >= 2 && logits.cols() % k == 0, ErrorKind::dimension,
          "softmax_groups: columns not divisible by group size");
  require(logits.value().allFinite(), ErrorKind::distribution,
          "softmax_groups: non-finite logits");
  Mat<S> p = detail::softmax_groups_value(logits.value(), k);
  bool ng = t.needs_grad(logits.id);
  int ai = logits.id;
  return t.make(
      std::move(p), ng,
      !ng ? typename Tape<S>::BackFn(nullptr)
          : [ai, k](Tape<S>& tp, int self, const Mat<S>& g) {
              const Mat<S>& p = tp.value(self);
              Mat<S> dx(p.rows(), p.cols());
              for (Eigen::Index g0 = 0; g0 < p.cols(); g0 += k) {
                auto pb = p.middleCols(g0, k).array();
                auto gb = g.middleCols(g0, k).array();
                Eigen::Array<S, Eigen::Dynamic, 1> dot =
                    (gb * pb).rowwise().sum();
                dx.middleCols(g0, k) =
                    (pb * (gb.colwise() - dot)).matrix();
              }
              tp.accum(ai, dx);
            });
}

// Log-softmax applied independently to each group of k columns per row.
template <typename S>
Var<S> log_softmax_groups(Var<S> logits, Eigen::Index k) {
  Tape<S>& t = *logits.tape;
  require(k >= 2 && logits.cols() % k == 0, ErrorKind::dimension,
          "log_softmax_groups: columns not divisible by group size");
  require(logits.value().allFinite(), ErrorKind::distribution,
          "log_softmax_groups: non-finite logits");
  Mat<S> y = detail::log_softmax_groups_value(logits.value(), k);
  bool ng = t.needs_grad(logits.id);
  int ai = logits.id;
  return t.make(
      std::move(y), ng,
      !ng ? typename Tape<S>::BackFn(nullptr)
          : [ai, k](Tape<S>& tp, int self, const Mat<S>& g) {
              const Mat<S>& y = tp.value(self);
              Mat<S> dx(y.rows(), y.cols());
              for (Eigen::Index g0 = 0; g0 < y.cols(); g0 += k) {
                auto pb = y.middleCols(g0, k).array().exp();
                auto gb = g.middleCols(g0, k).array();
                Eigen::Array<S, Eigen::Dynamic, 1> gsum =
                    gb.rowwise().sum();
                dx.middleCols(g0, k) =
                    (gb - pb.colwise() * gsum).matrix();
              }
              tp.accum(ai, dx);
            });
}

}  // namespace twist

#endif  // TWIST_TAPE_HPP_
