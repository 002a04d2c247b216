#ifndef TWIST_NETS_HPP_
#define TWIST_NETS_HPP_

#include <string>
#include <vector>

#include "twist/tape.hpp"

namespace twist {

// ---------------------------------------------------------------------------
// Dense stacks. widths[0] is the input width; ELU between layers, identity on
// the final layer unless final_elu is set.
// ---------------------------------------------------------------------------

struct MlpSpec {
  std::vector<int> widths;
  bool final_elu = false;

  void validate() const {
    require(widths.size() >= 2, ErrorKind::config,
            "MlpSpec: need at least one layer");
    for (int w : widths)
      require(w > 0, ErrorKind::config, "MlpSpec: widths must be positive");
  }

  int in() const { return widths.front(); }
  int out() const { return widths.back(); }
  int layers() const { return static_cast<int>(widths.size()) - 1; }
};

template <typename S>
void mlp_init(ParameterSet<S>& ps, const std::string& prefix,
              const MlpSpec& spec, Rng& rng) {
  spec.validate();
  for (int l = 0; l < spec.layers(); ++l) {
    int in = spec.widths[l], out = spec.widths[l + 1];
    ps.add(prefix + "/l" + std::to_string(l) + "/W",
           glorot_uniform<S>(in, out, rng));
    ps.add(prefix + "/l" + std::to_string(l) + "/b", Mat<S>::Zero(1, out));
  }
}

template <typename S>
Var<S> mlp_apply(const MlpSpec& spec, ParameterSet<S>& ps,
                 const std::string& prefix, Var<S> x, bool trainable = true) {
  spec.validate();
  require(x.cols() == spec.in(), ErrorKind::dimension,
          "mlp_apply: input width " + std::to_string(x.cols()) +
              " does not match layer 0 input width " +
              std::to_string(spec.in()) + " (" + prefix + ")");
  Tape<S>& t = *x.tape;
  Var<S> h = x;
  for (int l = 0; l < spec.layers(); ++l) {
    const std::string base = prefix + "/l" + std::to_string(l);
    Var<S> w = t.param(ps.at(base + "/W"), trainable);
    Var<S> b = t.param(ps.at(base + "/b"), trainable);
    require(h.cols() == w.rows(), ErrorKind::dimension,
            "mlp_apply: width mismatch at layer " + std::to_string(l) + " (" +
                prefix + ")");
    h = add(matmul(h, w), b);
    if (l + 1 < spec.layers() || spec.final_elu) h = elu(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Gated recurrent cell: the sequence model's recurrence. Update/reset gates
// fused into one matmul pair; candidate uses the reset-gated state.
//   z,r = sigmoid(x Wx_zr + h Wh_zr + b_zr)
//   c   = tanh(x Wx_c + (r*h) Wh_c + b_c)
//   h'  = (1-z)*h + z*c
// ---------------------------------------------------------------------------

template <typename S>
void gru_init(ParameterSet<S>& ps, const std::string& prefix, int in,
              int hidden, Rng& rng) {
  ps.add(prefix + "/Wx_zr", glorot_uniform<S>(in, 2 * hidden, rng));
  ps.add(prefix + "/Wh_zr", glorot_uniform<S>(hidden, 2 * hidden, rng));
  ps.add(prefix + "/b_zr", Mat<S>::Zero(1, 2 * hidden));
  ps.add(prefix + "/Wx_c", glorot_uniform<S>(in, hidden, rng));
  ps.add(prefix + "/Wh_c", glorot_uniform<S>(hidden, hidden, rng));
  ps.add(prefix + "/b_c", Mat<S>::Zero(1, hidden));
}

template <typename S>
Var<S> gru_step(ParameterSet<S>& ps, const std::string& prefix, Var<S> h_prev,
                Var<S> x, bool trainable = true) {
  Tape<S>& t = *h_prev.tape;
  const Eigen::Index hidden = h_prev.cols();
  Var<S> wx_zr = t.param(ps.at(prefix + "/Wx_zr"), trainable);
  Var<S> wh_zr = t.param(ps.at(prefix + "/Wh_zr"), trainable);
  require(x.cols() == wx_zr.rows(), ErrorKind::dimension,
          "gru_step: input width mismatch");
  require(hidden * 2 == wh_zr.cols() && h_prev.cols() == wh_zr.rows(),
          ErrorKind::dimension, "gru_step: state width mismatch");
  Var<S> zr = sigmoid(add(add(matmul(x, wx_zr), matmul(h_prev, wh_zr)),
                          t.param(ps.at(prefix + "/b_zr"), trainable)));
  Var<S> z = slice_cols(zr, 0, hidden);
  Var<S> r = slice_cols(zr, hidden, hidden);
  Var<S> c = tanh(add(
      add(matmul(x, t.param(ps.at(prefix + "/Wx_c"), trainable)),
          matmul(mul(r, h_prev), t.param(ps.at(prefix + "/Wh_c"), trainable))),
      t.param(ps.at(prefix + "/b_c"), trainable)));
  return add(mul(affine(z, S(-1), S(1)), h_prev), mul(z, c));
}

// ---------------------------------------------------------------------------
// Convolutions. Images live on the tape as [B, H*W*C] rows with HWC layout;
// forward/backward are im2col/col2im plus one GEMM each.
// ---------------------------------------------------------------------------

struct ConvGeom {
  int in_h, in_w, in_c;
  int out_c;
  int k = 4;
  int stride = 2;
  int pad = 1;

  int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
  int in_size() const { return in_h * in_w * in_c; }
  int out_size() const { return out_h() * out_w() * out_c; }
  int patch() const { return k * k * in_c; }
};

namespace detail {

// Gather patches: x [B, ih*iw*c] -> col [B*oh*ow, k*k*c]. Out-of-range taps
// stay zero (zero padding).
template <typename S>
Mat<S> im2col(const Mat<S>& x, int ih, int iw, int c, int k, int stride,
              int pad, int oh, int ow) {
  const Eigen::Index b_count = x.rows();
  Mat<S> col = Mat<S>::Zero(b_count * oh * ow, k * k * c);
  for (Eigen::Index b = 0; b < b_count; ++b) {
    const S* xr = x.data() + b * x.cols();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        S* cr = col.data() + ((b * oh + oy) * ow + ox) * col.cols();
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= ih) continue;
          int x0 = ox * stride - pad;
          int kx_lo = x0 < 0 ? -x0 : 0;
          int kx_hi = std::min(k, iw - x0);
          if (kx_lo >= kx_hi) continue;
          std::copy(xr + (iy * iw + x0 + kx_lo) * c,
                    xr + (iy * iw + x0 + kx_hi) * c,
                    cr + (ky * k + kx_lo) * c);
        }
      }
    }
  }
  return col;
}

// Scatter-add inverse of im2col: col [B*oh*ow, k*k*c] -> x [B, ih*iw*c].
template <typename S>
Mat<S> col2im(const Mat<S>& col, int ih, int iw, int c, int k, int stride,
              int pad, int oh, int ow) {
  const Eigen::Index b_count = col.rows() / (oh * ow);
  Mat<S> x = Mat<S>::Zero(b_count, ih * iw * c);
  for (Eigen::Index b = 0; b < b_count; ++b) {
    S* xr = x.data() + b * x.cols();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const S* cr = col.data() + ((b * oh + oy) * ow + ox) * col.cols();
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= ih) continue;
          int x0 = ox * stride - pad;
          int kx_lo = x0 < 0 ? -x0 : 0;
          int kx_hi = std::min(k, iw - x0);
          for (int kx = kx_lo; kx < kx_hi; ++kx) {
            S* dst = xr + (iy * iw + x0 + kx) * c;
            const S* src = cr + (ky * k + kx) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
  return x;
}

}  // namespace detail

// Strided convolution; weight [k*k*in_c, out_c], bias [1, out_c].
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, const ConvGeom& geom) {
  Tape<S>& t = *x.tape;
  require(x.cols() == geom.in_size(), ErrorKind::dimension,
          "conv2d: input size mismatch");
  require(w.rows() == geom.patch() && w.cols() == geom.out_c,
          ErrorKind::dimension, "conv2d: weight shape mismatch");
  const int oh = geom.out_h(), ow = geom.out_w();
  Mat<S> col = detail::im2col(x.value(), geom.in_h, geom.in_w, geom.in_c,
                              geom.k, geom.stride, geom.pad, oh, ow);
  Mat<S> y2 = col * w.value();
  y2.rowwise() += b.value().row(0);
  Mat<S> y = Eigen::Map<Mat<S>>(y2.data(), x.rows(), geom.out_size());
  bool ng = detail::any_grad<S>({x, w, b});
  int xi = x.id, wi = w.id, bi = b.id;
  return t.make(
      std::move(y), ng,
      !ng ? typename Tape<S>::BackFn(nullptr)
          : [xi, wi, bi, geom, col = std::move(col), oh,
             ow](Tape<S>& tp, int, const Mat<S>& g) {
              Eigen::Map<const Mat<S>> g2(g.data(), g.rows() * oh * ow,
                                          geom.out_c);
              tp.accum(wi, col.transpose() * g2);
              tp.accum(bi, g2.colwise().sum());
              if (tp.needs_grad(xi)) {
                Mat<S> dcol = g2 * tp.value(wi).transpose();
                tp.accum(xi, detail::col2im(dcol, geom.in_h, geom.in_w,
                                            geom.in_c, geom.k, geom.stride,
                                            geom.pad, oh, ow));
              }
            });
}

// Transposed (fractionally strided) convolution; weight [in_c, k*k*out_c],
// bias [1, out_c]. Output is (in-1)*stride - 2*pad + k per side.
struct TConvGeom {
  int in_h, in_w, in_c;
  int out_c;
  int k = 4;
  int stride = 2;
  int pad = 1;

  int out_h() const { return (in_h - 1) * stride - 2 * pad + k; }
  int out_w() const { return (in_w - 1) * stride - 2 * pad + k; }
  int in_size() const { return in_h * in_w * in_c; }
  int out_size() const { return out_h() * out_w() * out_c; }
};

template <typename S>
Var<S> conv2d_transpose(Var<S> x, Var<S> w, Var<S> b, const TConvGeom& geom) {
  Tape<S>& t = *x.tape;
  require(x.cols() == geom.in_size(), ErrorKind::dimension,
          "conv2d_transpose: input size mismatch");
  require(w.rows() == geom.in_c && w.cols() == geom.k * geom.k * geom.out_c,
          ErrorKind::dimension, "conv2d_transpose: weight shape mismatch");
  const int oh = geom.out_h(), ow = geom.out_w();
  Eigen::Map<const Mat<S>> x2(x.value().data(),
                              x.rows() * geom.in_h * geom.in_w, geom.in_c);
  Mat<S> patches = x2 * w.value();
  // scatter patches of each input pixel into the upsampled output
  Mat<S> y = detail::col2im(patches, oh, ow, geom.out_c, geom.k, geom.stride,
                            geom.pad, geom.in_h, geom.in_w);
  {
    Eigen::Map<Mat<S>> y2(y.data(), y.rows() * oh * ow, geom.out_c);
    y2.rowwise() += b.value().row(0);
  }
  bool ng = detail::any_grad<S>({x, w, b});
  int xi = x.id, wi = w.id, bi = b.id;
  return t.make(
      std::move(y), ng,
      !ng ? typename Tape<S>::BackFn(nullptr)
          : [xi, wi, bi, geom, oh, ow](Tape<S>& tp, int, const Mat<S>& g) {
              Eigen::Map<const Mat<S>> g2(g.data(), g.rows() * oh * ow,
                                          geom.out_c);
              tp.accum(bi, g2.colwise().sum());
              Mat<S> gpatches =
                  detail::im2col(g, oh, ow, geom.out_c, geom.k, geom.stride,
                                 geom.pad, geom.in_h, geom.in_w);
              const Mat<S>& xv = tp.value(xi);
              Eigen::Map<const Mat<S>> x2(
                  xv.data(), xv.rows() * geom.in_h * geom.in_w, geom.in_c);
              tp.accum(wi, x2.transpose() * gpatches);
              if (tp.needs_grad(xi)) {
                Mat<S> dx2 = gpatches * tp.value(wi).transpose();
                tp.accum(xi, Eigen::Map<Mat<S>>(dx2.data(), xv.rows(),
                                                geom.in_size()));
              }
            });
}

}  // namespace twist

#endif  // TWIST_NETS_HPP_
