#pragma once

#include <string>
#include <tuple>
#include <vector>

#include "capvid/params.hpp"
#include "capvid/tape_conv.hpp"

namespace capvid::nn {

using ad::ConvGeom;
using ad::Mat;
using ad::Tape;
using ad::Var;

// Dense affine map on column vectors.
template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<S>& store, const std::string& prefix, int in, int out, Rng& rng)
      : in_(in), out_(out) {
    w_ = store.add_xavier(prefix + ".w", out, in, in, out, rng);
    b_ = store.add(prefix + ".b", out, 1);
  }

  struct Bound {
    Var<S> w, b;
    Var<S> operator()(Var<S> x) const { return w * x + b; }
  };

  Bound bind(ParamStore<S>& store, Tape<S>& t) const {
    return Bound{store.use(t, w_), store.use(t, b_)};
  }

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }

 private:
  int in_ = 0, out_ = 0;
  int w_ = -1, b_ = -1;
};

// Gated recurrent cell with input/forget/output gating (standard LSTM).
// Gate block order in the stacked weight matrix: [input, forget, output, cell].
template <class S>
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParamStore<S>& store, const std::string& prefix, int in, int hidden, Rng& rng)
      : in_(in), hidden_(hidden) {
    w_ = store.add_xavier(prefix + ".w", 4 * hidden, in + hidden, in + hidden, hidden, rng);
    b_ = store.add(prefix + ".b", 4 * hidden, 1);
    // Forget-gate bias starts at 1 so early training keeps cell memory.
    auto& bv = store.entry(b_).value;
    bv.middleRows(hidden, hidden).setConstant(S(1));
  }

  struct State {
    Var<S> h, c;
  };

  struct Bound {
    Var<S> w, b;
    int hidden;

    State zero_state(Tape<S>& t) const {
      return State{t.constant(Mat<S>::Zero(hidden, 1)), t.constant(Mat<S>::Zero(hidden, 1))};
    }

    State step(Var<S> x, const State& s) const {
      Var<S> xh = ad::vstack<S>({x, s.h});
      Var<S> gates = w * xh + b;
      Var<S> i = ad::sigmoid(ad::rows(gates, 0, hidden));
      Var<S> f = ad::sigmoid(ad::rows(gates, hidden, hidden));
      Var<S> o = ad::sigmoid(ad::rows(gates, 2 * hidden, hidden));
      Var<S> g = ad::tanh(ad::rows(gates, 3 * hidden, hidden));
      Var<S> c = ad::cmul(f, s.c) + ad::cmul(i, g);
      Var<S> h = ad::cmul(o, ad::tanh(c));
      return State{h, c};
    }
  };

  Bound bind(ParamStore<S>& store, Tape<S>& t) const {
    return Bound{store.use(t, w_), store.use(t, b_), hidden_};
  }

  int in_dim() const { return in_; }
  int hidden_dim() const { return hidden_; }

 private:
  int in_ = 0, hidden_ = 0;
  int w_ = -1, b_ = -1;
};

// 2-D convolution layer over (channels, h*w) maps.
template <class S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<S>& store, const std::string& prefix, ConvGeom geom, Rng& rng) : geom_(geom) {
    const int fan_in = geom.in_ch * geom.kh * geom.kw;
    const int fan_out = geom.out_ch * geom.kh * geom.kw;
    w_ = store.add_xavier(prefix + ".w", geom.out_ch, geom.patch_rows(), fan_in, fan_out, rng);
    b_ = store.add(prefix + ".b", geom.out_ch, 1);
  }

  struct Bound {
    Var<S> w, b;
    ConvGeom geom;
    Var<S> operator()(Var<S> x) const { return ad::conv2d(x, w, b, geom); }
  };

  Bound bind(ParamStore<S>& store, Tape<S>& t) const {
    return Bound{store.use(t, w_), store.use(t, b_), geom_};
  }

  const ConvGeom& geom() const { return geom_; }

 private:
  ConvGeom geom_;
  int w_ = -1, b_ = -1;
};

// Transposed convolution; `geom` describes the matching forward conv, so this
// layer maps (geom.out_ch, out_h*out_w) back up to (geom.in_ch, in_h*in_w).
template <class S>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(ParamStore<S>& store, const std::string& prefix, ConvGeom geom, Rng& rng)
      : geom_(geom) {
    const int fan_in = geom.out_ch * geom.kh * geom.kw;
    const int fan_out = geom.in_ch * geom.kh * geom.kw;
    w_ = store.add_xavier(prefix + ".w", geom.out_ch, geom.patch_rows(), fan_in, fan_out, rng);
    b_ = store.add(prefix + ".b", geom.in_ch, 1);
  }

  struct Bound {
    Var<S> w, b;
    ConvGeom geom;
    Var<S> operator()(Var<S> x) const { return ad::conv2d_transpose(x, w, b, geom); }
  };

  Bound bind(ParamStore<S>& store, Tape<S>& t) const {
    return Bound{store.use(t, w_), store.use(t, b_), geom_};
  }

  const ConvGeom& geom() const { return geom_; }

 private:
  ConvGeom geom_;
  int w_ = -1, b_ = -1;
};

}  // namespace capvid::nn
