#pragma once

#include <cmath>

#include "capvid/tape.hpp"

namespace capvid::ad {

// Geometry of a 2-D convolution over (channels, height*width) matrices whose
// rows are row-major images.
struct ConvGeom {
  int in_ch = 1, in_h = 0, in_w = 0;
  int out_ch = 1, kh = 3, kw = 3;
  int stride = 1, pad = 1;

  int out_h() const { return (in_h + 2 * pad - kh) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kw) / stride + 1; }
  int patch_rows() const { return in_ch * kh * kw; }
};

// Unfolds conv patches: (C, H*W) -> (C*kh*kw, out_h*out_w).
template <class S>
Mat<S> im2col(const Mat<S>& x, const ConvGeom& g) {
  const int oh = g.out_h(), ow = g.out_w();
  Mat<S> col = Mat<S>::Zero(g.patch_rows(), oh * ow);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int q = oy * ow + ox;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          for (int c = 0; c < g.in_ch; ++c) {
            col(c * g.kh * g.kw + ky * g.kw + kx, q) = x(c, iy * g.in_w + ix);
          }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatter-adds patch columns back onto the image plane.
template <class S>
Mat<S> col2im(const Mat<S>& col, const ConvGeom& g) {
  const int oh = g.out_h(), ow = g.out_w();
  Mat<S> x = Mat<S>::Zero(g.in_ch, g.in_h * g.in_w);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int q = oy * ow + ox;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.in_h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.in_w) continue;
          for (int c = 0; c < g.in_ch; ++c) {
            x(c, iy * g.in_w + ix) += col(c * g.kh * g.kw + ky * g.kw + kx, q);
          }
        }
      }
    }
  }
  return x;
}

// conv2d: x (in_ch, in_h*in_w), w (out_ch, in_ch*kh*kw), b (out_ch, 1)
// -> (out_ch, out_h*out_w). im2col + GEMM forward; the unfolded matrix is
// cached for the weight gradient.
template <class S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> b, const ConvGeom& g) {
  if (x.rows() != g.in_ch || x.cols() != g.in_h * g.in_w)
    throw ShapeError("conv2d: input shape mismatch");
  if (w.rows() != g.out_ch || w.cols() != g.patch_rows())
    throw ShapeError("conv2d: weight shape mismatch");
  if (b.rows() != g.out_ch || b.cols() != 1) throw ShapeError("conv2d: bias shape mismatch");
  Tape<S>& t = *x.tape;
  Mat<S> col = im2col<S>(x.val(), g);
  Mat<S> y = w.val() * col;
  y.colwise() += b.val().col(0);
  Var<S> out = t.make(std::move(y));
  t.set_back(out, [&t, ox = x.id, ow = w.id, ob = b.id, o = out.id, g,
                   col = std::move(col)]() {
    const Mat<S>& gy = t.grad_of(o);
    t.accum(ow, gy * col.transpose());
    t.accum(ob, gy.rowwise().sum());
    t.accum(ox, col2im<S>(t.val(ow).transpose() * gy, g));
  });
  return out;
}

// Transposed convolution: the adjoint of conv2d with geometry `g` (which
// describes the matching forward conv big->small). Maps x (out_ch, oh*ow)
// -> (in_ch, in_h*in_w) and adds a per-channel bias.
template <class S>
Var<S> conv2d_transpose(Var<S> x, Var<S> w, Var<S> b, const ConvGeom& g) {
  if (x.rows() != g.out_ch || x.cols() != g.out_h() * g.out_w())
    throw ShapeError("conv2d_transpose: input shape mismatch");
  if (w.rows() != g.out_ch || w.cols() != g.patch_rows())
    throw ShapeError("conv2d_transpose: weight shape mismatch");
  if (b.rows() != g.in_ch || b.cols() != 1)
    throw ShapeError("conv2d_transpose: bias shape mismatch");
  Tape<S>& t = *x.tape;
  Mat<S> y = col2im<S>(w.val().transpose() * x.val(), g);
  y.colwise() += b.val().col(0);
  Var<S> out = t.make(std::move(y));
  t.set_back(out, [&t, ox = x.id, ow = w.id, ob = b.id, o = out.id, g]() {
    const Mat<S>& gy = t.grad_of(o);
    Mat<S> gy_col = im2col<S>(gy, g);
    t.accum(ox, t.val(ow) * gy_col);
    t.accum(ow, t.val(ox) * gy_col.transpose());
    t.accum(ob, gy.rowwise().sum());
  });
  return out;
}

// Sum over all pixels of the binary cross-entropy between targets in [0,1]
// and logistic(logits), computed in the numerically stable logit form
// sum(softplus(l) - y*l).
template <class S>
Var<S> bce_with_logits_sum(Var<S> logits, const Mat<S>& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols())
    throw ShapeError("bce_with_logits_sum: shape mismatch");
  Tape<S>& t = *logits.tape;
  const Mat<S>& l = logits.val();
  S acc = 0;
  for (Eigen::Index j = 0; j < l.cols(); ++j) {
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      S v = l(i, j);
      S sp = std::max<S>(v, 0) + std::log1p(std::exp(-std::abs(v)));
      acc += sp - target(i, j) * v;
    }
  }
  Mat<S> m(1, 1);
  m(0, 0) = acc;
  Var<S> out = t.make(std::move(m));
  t.set_back(out, [&t, ol = logits.id, o = out.id, target]() {
    const Mat<S>& l = t.val(ol);
    Mat<S> sig = (S(1) / (S(1) + (-l.array()).exp())).matrix();
    t.accum(ol, t.grad_of(o)(0, 0) * (sig - target));
  });
  return out;
}

}  // namespace capvid::ad
