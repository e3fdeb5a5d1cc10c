#pragma once

#include <vector>

#include "capvid/nn.hpp"

namespace capvid {

// Learned glimpse parameters: grid center, stride, isotropic variance and
// scalar intensity, each a differentiable (1,1) node.
template <class S>
struct GlimpseParams {
  ad::Var<S> gx, gy, delta, sigma2, gamma;
};

// Row-normalized Gaussian filter grids; fx is (N, W), fy is (N, H).
template <class S>
struct Filterbank {
  ad::Var<S> fx, fy;
  int N = 0, H = 0, W = 0;
};

// Maps the 5 raw affine outputs (g~x, g~y, log sigma^2, log delta~, log gamma)
// emitted from a recurrent state to glimpse parameters:
//   gx = (W+1)/2 * (g~x + 1), gy = (H+1)/2 * (g~y + 1),
//   delta = (max(H,W)-1)/(N-1) * exp(log delta~)   (N > 1),
//   sigma^2 = exp(log sigma^2), gamma = exp(log gamma).
template <class S>
GlimpseParams<S> emit_glimpse_params(ad::Var<S> raw5, int H, int W, int N) {
  if (N < 1) throw ConfigError("glimpse grid size must be >= 1");
  if (raw5.rows() != 5 || raw5.cols() != 1)
    throw ShapeError("emit_glimpse_params: raw head output must be (5,1)");
  GlimpseParams<S> p;
  p.gx = (ad::rows(raw5, 0, 1) + 1.0) * ((W + 1) / 2.0);
  p.gy = (ad::rows(raw5, 1, 1) + 1.0) * ((H + 1) / 2.0);
  p.sigma2 = ad::exp(ad::rows(raw5, 2, 1));
  ad::Var<S> delta_tilde = ad::exp(ad::rows(raw5, 3, 1));
  p.delta = N > 1 ? delta_tilde * ((std::max(H, W) - 1) / static_cast<double>(N - 1))
                  : delta_tilde;
  p.gamma = ad::exp(ad::rows(raw5, 4, 1));
  return p;
}

namespace detail {

// One axis of the filter grid: (N, dim) matrix with
// F[i,a] = (exp(-(a - mu_i)^2 / (2 sigma^2)) + eps) / row_sum, where
// mu_i = center + (i - N/2 - 0.5) * delta for i in 1..N. The additive eps
// floor keeps rows on the simplex for arbitrary parameters.
template <class S>
ad::Var<S> filter_axis(ad::Var<S> center, ad::Var<S> delta, ad::Var<S> sigma2, int N, int dim) {
  ad::Tape<S>& t = *center.tape;
  ad::Mat<S> offsets(N, 1);
  for (int i = 0; i < N; ++i) offsets(i, 0) = static_cast<S>((i + 1) - N / 2.0 - 0.5);
  ad::Mat<S> coords(N, dim);
  for (int i = 0; i < N; ++i)
    for (int a = 0; a < dim; ++a) coords(i, a) = static_cast<S>(a);

  ad::Var<S> mu = ad::smul(center, t.constant(ad::Mat<S>::Ones(N, 1))) +
                  ad::smul(delta, t.constant(offsets));
  ad::Var<S> d = t.constant(coords) - ad::bcast_col(mu, dim);
  ad::Var<S> expo = ad::smul(ad::reciprocal(sigma2 * 2.0), ad::square(d));
  ad::Var<S> e = ad::exp(-expo) + 1e-8;
  return ad::cdiv(e, ad::bcast_col(ad::rowsum(e), dim));
}

}  // namespace detail

template <class S>
Filterbank<S> build_filterbank(const GlimpseParams<S>& p, int H, int W, int N) {
  Filterbank<S> fb;
  fb.N = N;
  fb.H = H;
  fb.W = W;
  fb.fx = detail::filter_axis(p.gx, p.delta, p.sigma2, N, W);
  fb.fy = detail::filter_axis(p.gy, p.delta, p.sigma2, N, H);
  return fb;
}

// Extracts a gamma-scaled (C, N*N) glimpse: per channel, gamma * Fy X Fx^T.
template <class S>
ad::Var<S> read_glimpse(ad::Var<S> image, const Filterbank<S>& fb, ad::Var<S> gamma, int channels) {
  if (image.rows() != channels || image.cols() != fb.H * fb.W)
    throw ShapeError("read_glimpse: image dims do not match filterbank");
  std::vector<ad::Var<S>> per_channel;
  ad::Var<S> fxt = ad::transpose(fb.fx);
  for (int c = 0; c < channels; ++c) {
    ad::Var<S> plane = ad::reshape(ad::rows(image, c, 1), fb.H, fb.W);
    ad::Var<S> patch = fb.fy * plane * fxt;
    per_channel.push_back(ad::reshape(patch, 1, fb.N * fb.N));
  }
  return ad::smul(gamma, ad::vstack(per_channel));
}

// Adjoint insertion of a (C, N*N) patch into the image plane: per channel,
// (1/gamma) * Fy^T P Fx, returned as a (C, H*W) additive update.
template <class S>
ad::Var<S> write_patch(ad::Var<S> patch, const Filterbank<S>& fb, ad::Var<S> gamma, int channels) {
  if (patch.rows() != channels || patch.cols() != fb.N * fb.N)
    throw ShapeError("write_patch: patch dims do not match filterbank");
  if (gamma.val()(0, 0) <= S(0)) throw ConfigError("write_patch: gamma must be positive");
  std::vector<ad::Var<S>> per_channel;
  ad::Var<S> fyt = ad::transpose(fb.fy);
  for (int c = 0; c < channels; ++c) {
    ad::Var<S> p = ad::reshape(ad::rows(patch, c, 1), fb.N, fb.N);
    ad::Var<S> plane = fyt * p * fb.fx;
    per_channel.push_back(ad::reshape(plane, 1, fb.H * fb.W));
  }
  return ad::smul(ad::reciprocal(gamma), ad::vstack(per_channel));
}

// Scalar-scored soft attention over word states:
//   alpha_i = softmax_i( v^T tanh(u h_i + w q + b) ),
//   context = sum_i alpha_i h_i.
template <class S>
class SoftAttention {
 public:
  SoftAttention() = default;
  SoftAttention(ParamStore<S>& store, const std::string& prefix, int d_state, int d_query,
                int d_score, Rng& rng)
      : d_state_(d_state), d_query_(d_query), d_score_(d_score) {
    u_ = store.add_xavier(prefix + ".u", d_score, d_state, d_state, d_score, rng);
    w_ = store.add_xavier(prefix + ".w", d_score, d_query, d_query, d_score, rng);
    b_ = store.add(prefix + ".b", d_score, 1);
    v_ = store.add_xavier(prefix + ".v", 1, d_score, d_score, 1, rng);
  }

  struct Result {
    ad::Var<S> context;  // (d_state, 1)
    ad::Var<S> weights;  // (m, 1), on the simplex
  };

  Result attend(ad::Tape<S>& t, ParamStore<S>& store, const std::vector<ad::Var<S>>& states,
                ad::Var<S> query) const {
    if (states.empty()) throw ConfigError("soft attention requires at least one word state");
    if (query.rows() != d_query_)
      throw ShapeError("soft attention: query dim " + std::to_string(query.rows()) +
                       ", expected " + std::to_string(d_query_));
    const int m = static_cast<int>(states.size());
    ad::Var<S> u = store.use(t, u_);
    ad::Var<S> w = store.use(t, w_);
    ad::Var<S> b = store.use(t, b_);
    ad::Var<S> v = store.use(t, v_);

    ad::Var<S> h = ad::hstack(states);                     // (d_state, m)
    ad::Var<S> scores = v * ad::tanh(u * h + ad::bcast_col(w * query + b, m));  // (1, m)
    ad::Var<S> alphas = ad::softmax_col(ad::transpose(scores));
    return Result{h * alphas, alphas};
  }

  int d_state() const { return d_state_; }
  int d_query() const { return d_query_; }

 private:
  int d_state_ = 0, d_query_ = 0, d_score_ = 0;
  int u_ = -1, w_ = -1, b_ = -1, v_ = -1;
};

}  // namespace capvid
