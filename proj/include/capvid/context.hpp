#pragma once

#include <vector>

#include "capvid/attn.hpp"
#include "capvid/nn.hpp"

namespace capvid {

// Convolutional recurrent encoder over the frames generated so far. Frames
// are downsampled through stride-2 convolutions, then a conv-gated recurrent
// cell updates spatial hidden/cell maps; the summary vector is a learned
// projection of the spatially pooled hidden map.
template <class S>
class HistoryEncoder {
 public:
  HistoryEncoder() = default;
  HistoryEncoder(ParamStore<S>& store, const std::string& prefix, int C_in, int H, int W, int C_h,
                 int down_stages, int d_v, Rng& rng)
      : c_in_(C_in), h_(H), w_(W), c_h_(C_h), d_v_(d_v) {
    if (down_stages < 1) throw ConfigError("history encoder needs at least one stride-2 stage");
    int ch = C_in;
    int hh = H, ww = W;
    for (int s = 0; s < down_stages; ++s) {
      ad::ConvGeom g;
      g.in_ch = ch;
      g.in_h = hh;
      g.in_w = ww;
      g.out_ch = s + 1 == down_stages ? C_h : std::max(4, C_h / 2);
      g.stride = 2;
      g.pad = 1;
      down_.emplace_back(store, prefix + ".down" + std::to_string(s), g, rng);
      ch = g.out_ch;
      hh = g.out_h();
      ww = g.out_w();
    }
    hp_ = hh;
    wp_ = ww;
    ad::ConvGeom gx;
    gx.in_ch = C_h;
    gx.in_h = hp_;
    gx.in_w = wp_;
    gx.out_ch = 4 * C_h;
    gate_x_ = nn::Conv2d<S>(store, prefix + ".gx", gx, rng);
    gate_h_ = nn::Conv2d<S>(store, prefix + ".gh", gx, rng);
    proj_ = nn::Linear<S>(store, prefix + ".proj", C_h, d_v, rng);
  }

  struct State {
    ad::Var<S> h, c;       // (C_h, H'*W')
    ad::Var<S> summary;    // (d_v, 1)
  };

  struct Bound {
    std::vector<typename nn::Conv2d<S>::Bound> down;
    typename nn::Conv2d<S>::Bound gate_x, gate_h;
    typename nn::Linear<S>::Bound proj;
    const HistoryEncoder* self;
  };

  Bound bind(ParamStore<S>& store, ad::Tape<S>& t) const {
    Bound b;
    for (const auto& d : down_) b.down.push_back(d.bind(store, t));
    b.gate_x = gate_x_.bind(store, t);
    b.gate_h = gate_h_.bind(store, t);
    b.proj = proj_.bind(store, t);
    b.self = this;
    return b;
  }

  // All-zero maps and summary.
  State init(ad::Tape<S>& t) const {
    return State{t.constant(ad::Mat<S>::Zero(c_h_, hp_ * wp_)),
                 t.constant(ad::Mat<S>::Zero(c_h_, hp_ * wp_)),
                 t.constant(ad::Mat<S>::Zero(d_v_, 1))};
  }

  // One conv-recurrent step on a (C_in, H*W) frame.
  State step(ad::Tape<S>& t, const Bound& b, const State& s, ad::Var<S> frame) const {
    if (frame.rows() != c_in_ || frame.cols() != h_ * w_)
      throw ShapeError("history step: frame shape mismatch");
    ad::Var<S> x = frame;
    for (const auto& d : b.down) x = ad::tanh(d(x));
    ad::Var<S> gates = b.gate_x(x) + b.gate_h(s.h);
    ad::Var<S> gi = ad::sigmoid(ad::rows(gates, 0, c_h_));
    ad::Var<S> gf = ad::sigmoid(ad::rows(gates, c_h_, c_h_));
    ad::Var<S> go = ad::sigmoid(ad::rows(gates, 2 * c_h_, c_h_));
    ad::Var<S> gg = ad::tanh(ad::rows(gates, 3 * c_h_, c_h_));
    ad::Var<S> c = ad::cmul(gf, s.c) + ad::cmul(gi, gg);
    ad::Var<S> h = ad::cmul(go, ad::tanh(c));
    // Spatial mean pool, then project to the summary space.
    ad::Mat<S> pool = ad::Mat<S>::Constant(hp_ * wp_, 1, S(1) / static_cast<S>(hp_ * wp_));
    ad::Var<S> pooled = h * t.constant(pool);
    return State{h, c, b.proj(pooled)};
  }

  int hp() const { return hp_; }
  int wp() const { return wp_; }
  int d_v() const { return d_v_; }
  int channels() const { return c_h_; }

 private:
  int c_in_ = 0, h_ = 0, w_ = 0, c_h_ = 0, d_v_ = 0;
  int hp_ = 0, wp_ = 0;
  std::vector<nn::Conv2d<S>> down_;
  nn::Conv2d<S> gate_x_, gate_h_;
  nn::Linear<S> proj_;
};

// Two conv layers plus one fully connected readout over an (C, N*N) glimpse.
template <class S>
class GlimpseFeatureNet {
 public:
  GlimpseFeatureNet() = default;
  GlimpseFeatureNet(ParamStore<S>& store, const std::string& prefix, int C, int N, int c1, int c2,
                    int d_g, Rng& rng)
      : c_(C), n_(N) {
    ad::ConvGeom g1;
    g1.in_ch = C;
    g1.in_h = g1.in_w = N;
    g1.out_ch = c1;
    conv1_ = nn::Conv2d<S>(store, prefix + ".conv1", g1, rng);
    ad::ConvGeom g2 = g1;
    g2.in_ch = c1;
    g2.out_ch = c2;
    conv2_ = nn::Conv2d<S>(store, prefix + ".conv2", g2, rng);
    fc_ = nn::Linear<S>(store, prefix + ".fc", c2 * N * N, d_g, rng);
  }

  struct Bound {
    typename nn::Conv2d<S>::Bound conv1, conv2;
    typename nn::Linear<S>::Bound fc;
    int c, n;

    ad::Var<S> operator()(ad::Var<S> patch) const {
      if (patch.rows() != c || patch.cols() != n * n)
        throw ShapeError("glimpse features: patch shape mismatch");
      ad::Var<S> x = ad::relu(conv1(patch));
      x = ad::relu(conv2(x));
      x = ad::reshape(x, x.rows() * x.cols(), 1);
      return ad::tanh(fc(x));
    }
  };

  Bound bind(ParamStore<S>& store, ad::Tape<S>& t) const {
    return Bound{conv1_.bind(store, t), conv2_.bind(store, t), fc_.bind(store, t), c_, n_};
  }

 private:
  int c_ = 0, n_ = 0;
  nn::Conv2d<S> conv1_, conv2_;
  nn::Linear<S> fc_;
};

// Long-term context: caption attention queried by the history summary.
template <class S>
ad::Var<S> long_term_context(ad::Tape<S>& t, ParamStore<S>& store, const SoftAttention<S>& attn,
                             const std::vector<ad::Var<S>>& enc_states,
                             const typename HistoryEncoder<S>::State& history) {
  return attn.attend(t, store, enc_states, history.summary).context;
}

// Short-term context: caption attention queried by the previous-frame glimpse
// features concatenated with the previous decoder state.
template <class S>
ad::Var<S> short_term_context(ad::Tape<S>& t, ParamStore<S>& store, const SoftAttention<S>& attn,
                              const std::vector<ad::Var<S>>& enc_states,
                              ad::Var<S> prev_glimpse_feat, ad::Var<S> h_dec_prev) {
  return attn.attend(t, store, enc_states, ad::vstack<S>({prev_glimpse_feat, h_dec_prev}))
      .context;
}

}  // namespace capvid
