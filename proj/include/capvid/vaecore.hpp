#pragma once

#include <array>
#include <string>
#include <vector>

#include "capvid/attn.hpp"
#include "capvid/context.hpp"
#include "capvid/lang.hpp"

namespace capvid {

enum class ModelMode {
  Captioned,
  Unsupervised,
  AblateLongCaption,
  AblateShortCaption,
  OnehotBaseline,
};

inline ModelMode mode_from_string(const std::string& s) {
  if (s == "captioned") return ModelMode::Captioned;
  if (s == "unsupervised") return ModelMode::Unsupervised;
  if (s == "ablate-long-caption") return ModelMode::AblateLongCaption;
  if (s == "ablate-short-caption") return ModelMode::AblateShortCaption;
  if (s == "onehot-baseline") return ModelMode::OnehotBaseline;
  throw ConfigError("unknown mode: " + s);
}

inline std::string mode_to_string(ModelMode m) {
  switch (m) {
    case ModelMode::Captioned: return "captioned";
    case ModelMode::Unsupervised: return "unsupervised";
    case ModelMode::AblateLongCaption: return "ablate-long-caption";
    case ModelMode::AblateShortCaption: return "ablate-short-caption";
    case ModelMode::OnehotBaseline: return "onehot-baseline";
  }
  throw ConfigError("bad mode enum");
}

// Per-segment conditioning: token ids for caption modes, a raw vector for
// the one-hot baseline, nothing when unsupervised.
struct SegmentCond {
  int start_frame = 1;  // 1-based frame index at which this segment begins
  std::vector<int> tokens;
  std::vector<double> onehot;
};

// Diagnostic capture of the attention state during generation.
struct GlimpseTrace {
  double gx = 0, gy = 0, delta = 0, sigma2 = 0, gamma = 0;
};

struct StepTrace {
  GlimpseTrace read, write;
  std::vector<double> short_weights;  // caption attention on the short pathway
};

struct FrameTrace {
  std::vector<double> long_weights;  // caption attention on the long pathway
  std::vector<StepTrace> steps;
};

struct ModelConfig {
  int T = 4;              // timesteps per frame
  int d_z = 16;           // latent size
  int N = 8;              // glimpse grid size
  int d_lang = 64;        // caption state size (both directions concatenated)
  int d_emb = 32;         // word embedding size
  int d_a = 0;            // attention score size; 0 selects d_lang
  int d_v = 64;           // history summary size
  int d_g = 64;           // glimpse feature size
  int d_enc = 128;        // encoder recurrent size
  int d_dec = 128;        // decoder recurrent size
  int H = 64, W = 64, C = 1;
  int S = 1;              // likelihood samples per frame
  ModelMode mode = ModelMode::Captioned;
  int vocab_size = 0;
  int glimpse_c1 = 8, glimpse_c2 = 16;  // glimpse feature net channels
  int hist_channels = 32;
  int hist_down = 2;      // stride-2 stages before the conv-recurrent cell
  int onehot_dim = 12;    // conditioning width for the one-hot baseline

  bool uses_caption_encoder() const {
    return mode == ModelMode::Captioned || mode == ModelMode::AblateLongCaption ||
           mode == ModelMode::AblateShortCaption;
  }
  bool uses_long_attention() const {
    return mode == ModelMode::Captioned || mode == ModelMode::AblateShortCaption;
  }
  bool uses_short_attention() const {
    return mode == ModelMode::Captioned || mode == ModelMode::AblateLongCaption;
  }

  // Width of the short-term conditioning slot fed to both recurrent cores.
  int short_slot_dim() const {
    switch (mode) {
      case ModelMode::Captioned:
      case ModelMode::AblateLongCaption: return d_lang;
      case ModelMode::AblateShortCaption:
      case ModelMode::Unsupervised: return d_g;
      case ModelMode::OnehotBaseline: return onehot_dim;
    }
    return d_lang;
  }

  // Width of the long-term conditioning slot.
  int long_slot_dim() const {
    switch (mode) {
      case ModelMode::Captioned:
      case ModelMode::AblateShortCaption: return d_lang;
      case ModelMode::AblateLongCaption:
      case ModelMode::Unsupervised: return d_v;
      case ModelMode::OnehotBaseline: return onehot_dim;
    }
    return d_lang;
  }

  int d_score() const { return d_a > 0 ? d_a : d_lang; }

  void validate() const {
    if (T < 1) throw ConfigError("T must be >= 1");
    if (S < 1) throw ConfigError("S must be >= 1");
    for (int v : {d_z, N, d_lang, d_emb, d_v, d_g, d_enc, d_dec, H, W, C, glimpse_c1, glimpse_c2,
                  hist_channels, hist_down})
      if (v < 1) throw ConfigError("all model dimensions must be positive");
    if (d_lang % 2 != 0) throw ConfigError("d_lang must be even");
    if (uses_caption_encoder() && vocab_size < 1)
      throw ConfigError("caption-conditioned modes need a vocabulary");
    if (mode == ModelMode::OnehotBaseline && onehot_dim < 1)
      throw ConfigError("onehot baseline needs a positive conditioning width");
    const int div = 1 << hist_down;
    if (H % div != 0 || W % div != 0)
      throw ConfigError("H and W must be divisible by 2^hist_down");
  }
};

// The per-frame recurrent variational autoencoder with caption conditioning,
// plus the frame-level autoregressive loop.
template <class S>
class CapVidModel {
 public:
  using M = ad::Mat<S>;
  using V = ad::Var<S>;
  using MatD = Eigen::MatrixXd;

  CapVidModel(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(init_seed, 0x90DE1));
    if (cfg_.uses_caption_encoder())
      lang_ = LangEncoder<S>(params_, "lang", cfg_.vocab_size, cfg_.d_emb, cfg_.d_lang, rng);
    hist_ = HistoryEncoder<S>(params_, "hist", cfg_.C, cfg_.H, cfg_.W, cfg_.hist_channels,
                              cfg_.hist_down, cfg_.d_v, rng);
    feat_prev_ = GlimpseFeatureNet<S>(params_, "feat_prev", cfg_.C, cfg_.N, cfg_.glimpse_c1,
                                      cfg_.glimpse_c2, cfg_.d_g, rng);
    feat_canvas_ = GlimpseFeatureNet<S>(params_, "feat_canvas", cfg_.C, cfg_.N, cfg_.glimpse_c1,
                                        cfg_.glimpse_c2, cfg_.d_g, rng);
    feat_err_ = GlimpseFeatureNet<S>(params_, "feat_err", cfg_.C, cfg_.N, cfg_.glimpse_c1,
                                     cfg_.glimpse_c2, cfg_.d_g, rng);
    if (cfg_.uses_long_attention())
      attn_long_ = SoftAttention<S>(params_, "attn_long", cfg_.d_lang, cfg_.d_v, cfg_.d_score(),
                                    rng);
    if (cfg_.uses_short_attention())
      attn_short_ = SoftAttention<S>(params_, "attn_short", cfg_.d_lang, cfg_.d_g + cfg_.d_dec,
                                     cfg_.d_score(), rng);
    read_head_ = nn::Linear<S>(params_, "read_head", cfg_.d_dec, 5, rng);
    write_head_ = nn::Linear<S>(params_, "write_head", cfg_.d_dec, 5, rng);

    const int enc_in = 2 * cfg_.d_g + cfg_.short_slot_dim() + cfg_.long_slot_dim() + cfg_.d_dec;
    const int dec_in = cfg_.d_z + cfg_.short_slot_dim() + cfg_.long_slot_dim();
    enc_lstm_ = nn::LstmCell<S>(params_, "enc_lstm", enc_in, cfg_.d_enc, rng);
    dec_lstm_ = nn::LstmCell<S>(params_, "dec_lstm", dec_in, cfg_.d_dec, rng);
    mu_head_ = nn::Linear<S>(params_, "mu_head", cfg_.d_enc, cfg_.d_z, rng);
    logsigma_head_ = nn::Linear<S>(params_, "logsigma_head", cfg_.d_enc, cfg_.d_z, rng);

    deconv_fc_ = nn::Linear<S>(params_, "deconv_fc", cfg_.d_dec,
                               cfg_.glimpse_c2 * cfg_.N * cfg_.N, rng);
    ad::ConvGeom g1;  // maps (c2, N^2) up to (c1, N^2)
    g1.in_ch = cfg_.glimpse_c1;
    g1.out_ch = cfg_.glimpse_c2;
    g1.in_h = g1.in_w = cfg_.N;
    deconv1_ = nn::ConvTranspose2d<S>(params_, "deconv1", g1, rng);
    ad::ConvGeom g2;  // maps (c1, N^2) to the (C, N^2) write patch
    g2.in_ch = cfg_.C;
    g2.out_ch = cfg_.glimpse_c1;
    g2.in_h = g2.in_w = cfg_.N;
    deconv2_ = nn::ConvTranspose2d<S>(params_, "deconv2", g2, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  const LangEncoder<S>& lang() const { return lang_; }
  const HistoryEncoder<S>& history_encoder() const { return hist_; }
  const SoftAttention<S>& attn_long() const { return attn_long_; }
  const SoftAttention<S>& attn_short() const { return attn_short_; }

  struct Bound {
    typename HistoryEncoder<S>::Bound hist;
    typename GlimpseFeatureNet<S>::Bound feat_prev, feat_canvas, feat_err;
    typename nn::Linear<S>::Bound read_head, write_head, mu_head, logsigma_head, deconv_fc;
    typename nn::LstmCell<S>::Bound enc_lstm, dec_lstm;
    typename nn::ConvTranspose2d<S>::Bound deconv1, deconv2;
  };

  Bound bind(ad::Tape<S>& t) {
    return Bound{hist_.bind(params_, t),
                 feat_prev_.bind(params_, t),
                 feat_canvas_.bind(params_, t),
                 feat_err_.bind(params_, t),
                 read_head_.bind(params_, t),
                 write_head_.bind(params_, t),
                 mu_head_.bind(params_, t),
                 logsigma_head_.bind(params_, t),
                 deconv_fc_.bind(params_, t),
                 enc_lstm_.bind(params_, t),
                 dec_lstm_.bind(params_, t),
                 deconv1_.bind(params_, t),
                 deconv2_.bind(params_, t)};
  }

  using SegmentCond = capvid::SegmentCond;

  // One frame's generation state across the T timesteps.
  struct Episode {
    V prev_frame;                   // (C, H*W)
    std::vector<V> enc_states;      // caption states; empty unless encoder used
    V long_slot;                    // fixed for the frame (s_l or substitute)
    typename HistoryEncoder<S>::State history;
    typename nn::LstmCell<S>::State enc_state, dec_state;
    V canvas;                       // pre-activation accumulator (C, H*W)
    std::vector<std::pair<V, V>> latents;  // (mu_t, sigma_t)
    V onehot;                       // valid in one-hot mode only
  };

  // Encodes segment conditioning onto the tape.
  std::vector<V> encode_segment(ad::Tape<S>& t, const SegmentCond& cond) {
    if (!cfg_.uses_caption_encoder()) return {};
    return lang_.encode(t, params_, cond.tokens);
  }

  V onehot_var(ad::Tape<S>& t, const SegmentCond& cond) {
    if (cfg_.mode != ModelMode::OnehotBaseline) return V{};
    if (static_cast<int>(cond.onehot.size()) != cfg_.onehot_dim)
      throw ConfigError("onehot conditioning must have width " +
                        std::to_string(cfg_.onehot_dim));
    M v(cfg_.onehot_dim, 1);
    for (int i = 0; i < cfg_.onehot_dim; ++i) v(i, 0) = static_cast<S>(cond.onehot[i]);
    return t.constant(std::move(v));
  }

  // Starts a frame: zeroed canvas and recurrent states, long-term slot
  // computed once from the history that precedes this frame.
  Episode begin_frame(ad::Tape<S>& t, Bound& b, V prev_frame,
                      const typename HistoryEncoder<S>::State& history,
                      const std::vector<V>& enc_states, V onehot = V{}) {
    Episode ep;
    ep.prev_frame = prev_frame;
    ep.enc_states = enc_states;
    ep.history = history;
    ep.onehot = onehot;
    ep.enc_state = b.enc_lstm.zero_state(t);
    ep.dec_state = b.dec_lstm.zero_state(t);
    ep.canvas = t.constant(M::Zero(cfg_.C, cfg_.H * cfg_.W));
    switch (cfg_.mode) {
      case ModelMode::Captioned:
      case ModelMode::AblateShortCaption:
        ep.long_slot = long_term_context(t, params_, attn_long_, enc_states, history);
        break;
      case ModelMode::AblateLongCaption:
      case ModelMode::Unsupervised:
        ep.long_slot = history.summary;
        break;
      case ModelMode::OnehotBaseline:
        ep.long_slot = onehot;
        break;
    }
    return ep;
  }

  // One encode/sample/decode/write timestep. In training mode the posterior
  // additionally reads a glimpse of the error image (target - canvas), the
  // standard posterior pathway for canvas-accumulating models.
  void frame_step(ad::Tape<S>& t, Bound& b, Episode& ep, int step_index, bool training,
                  const M* target, Rng& rng) {
    if (step_index < 1 || step_index > cfg_.T)
      throw ConfigError("timestep index out of range: " + std::to_string(step_index));
    if (training && target == nullptr)
      throw ConfigError("training step requires a target frame");

    V canvas_img = ad::sigmoid(ep.canvas);
    auto read_params =
        emit_glimpse_params(b.read_head(ep.dec_state.h), cfg_.H, cfg_.W, cfg_.N);
    auto fb = build_filterbank(read_params, cfg_.H, cfg_.W, cfg_.N);
    V r_prev_patch = read_glimpse(ep.prev_frame, fb, read_params.gamma, cfg_.C);
    V r_prev = b.feat_prev(r_prev_patch);
    V r_canvas = b.feat_canvas(read_glimpse(canvas_img, fb, read_params.gamma, cfg_.C));

    V short_slot;
    switch (cfg_.mode) {
      case ModelMode::Captioned:
      case ModelMode::AblateLongCaption:
        short_slot = short_term_context(t, params_, attn_short_, ep.enc_states, r_prev,
                                        ep.dec_state.h);
        break;
      case ModelMode::AblateShortCaption:
      case ModelMode::Unsupervised:
        short_slot = r_prev;
        break;
      case ModelMode::OnehotBaseline:
        short_slot = ep.onehot;
        break;
    }

    V z;
    if (training) {
      V err_img = t.constant(*target) - canvas_img;
      V r_err = b.feat_err(read_glimpse(err_img, fb, read_params.gamma, cfg_.C));
      V enc_in = ad::vstack<S>({r_canvas, r_err, short_slot, ep.long_slot, ep.dec_state.h});
      ep.enc_state = b.enc_lstm.step(enc_in, ep.enc_state);
      V mu = b.mu_head(ep.enc_state.h);
      V sigma = ad::exp(b.logsigma_head(ep.enc_state.h));
      M eps(cfg_.d_z, 1);
      for (int i = 0; i < cfg_.d_z; ++i) eps(i, 0) = static_cast<S>(rng.gaussian());
      z = mu + ad::cmul(sigma, t.constant(std::move(eps)));
      ep.latents.emplace_back(mu, sigma);
    } else {
      M sample(cfg_.d_z, 1);
      for (int i = 0; i < cfg_.d_z; ++i) sample(i, 0) = static_cast<S>(rng.gaussian());
      z = t.constant(std::move(sample));
    }

    V dec_in = ad::vstack<S>({z, short_slot, ep.long_slot});
    ep.dec_state = b.dec_lstm.step(dec_in, ep.dec_state);

    V patch = ad::relu(ad::reshape(b.deconv_fc(ep.dec_state.h), cfg_.glimpse_c2,
                                   cfg_.N * cfg_.N));
    patch = ad::relu(b.deconv1(patch));
    patch = b.deconv2(patch);

    auto write_params =
        emit_glimpse_params(b.write_head(ep.dec_state.h), cfg_.H, cfg_.W, cfg_.N);
    auto wfb = build_filterbank(write_params, cfg_.H, cfg_.W, cfg_.N);
    ep.canvas = ep.canvas + write_patch(patch, wfb, write_params.gamma, cfg_.C);
  }

  void frame_step_train(ad::Tape<S>& t, Bound& b, Episode& ep, const M& target, int step_index,
                        Rng& rng) {
    frame_step(t, b, ep, step_index, true, &target, rng);
  }

  void frame_step_generate(ad::Tape<S>& t, Bound& b, Episode& ep, int step_index, Rng& rng) {
    frame_step(t, b, ep, step_index, false, nullptr, rng);
  }

  V frame_from_canvas(const Episode& ep) const { return ad::sigmoid(ep.canvas); }

  // Runs the full T-step loop in inference mode and returns the frame node.
  V generate_frame(ad::Tape<S>& t, Bound& b, V prev_frame,
                   const typename HistoryEncoder<S>::State& history,
                   const std::vector<V>& enc_states, Rng& rng, V onehot = V{}) {
    Episode ep = begin_frame(t, b, prev_frame, history, enc_states, onehot);
    for (int step = 1; step <= cfg_.T; ++step) frame_step_generate(t, b, ep, step, rng);
    return frame_from_canvas(ep);
  }

  // Sum over pixels of binary cross-entropy between the target and the
  // logistic-squashed canvas.
  static V reconstruction_loss(V canvas, const M& target) {
    return ad::bce_with_logits_sum(canvas, target);
  }

  // Closed-form KL against the standard-normal prior, summed over timesteps
  // and latent dimensions.
  static V kl_loss(ad::Tape<S>& t, const std::vector<std::pair<V, V>>& latents) {
    V acc = t.constant_scalar(S(0));
    for (const auto& [mu, sigma] : latents) {
      if (sigma.val().minCoeff() <= S(0)) throw ConfigError("kl_loss: sigma must be positive");
      V s2 = ad::square(sigma);
      acc = acc + ad::sum(ad::square(mu) + s2 - ad::log(s2) - 1.0) * 0.5;
    }
    return acc;
  }

  struct VideoLoss {
    V total;
    std::vector<double> recon_per_frame;
    std::vector<double> kl_per_frame;
    double recon() const {
      double a = 0;
      for (double v : recon_per_frame) a += v;
      return a;
    }
    double kl() const {
      double a = 0;
      for (double v : kl_per_frame) a += v;
      return a;
    }
  };

  // Teacher-forced loss over a video given as frames[0..n] where frames[0] is
  // the start-of-video frame. Reconstruction and KL are averaged over S
  // likelihood samples; the KL term is scaled by kl_weight (warm-up).
  VideoLoss total_loss(ad::Tape<S>& t, Bound& b, const std::vector<MatD>& frames_with_sov,
                       const SegmentCond& cond, Rng& rng, double kl_weight = 1.0) {
    if (frames_with_sov.size() < 2)
      throw ConfigError("total_loss: need a start-of-video frame plus at least one target");
    if (cfg_.mode == ModelMode::Unsupervised && (!cond.tokens.empty() || !cond.onehot.empty()))
      throw ConfigError("caption conditioning supplied in unsupervised mode");

    std::vector<V> enc_states = encode_segment(t, cond);
    V onehot = onehot_var(t, cond);

    std::vector<M> frames;
    frames.reserve(frames_with_sov.size());
    for (const auto& f : frames_with_sov) frames.push_back(f.template cast<S>());

    VideoLoss out;
    out.total = t.constant_scalar(S(0));
    auto history = hist_.init(t);
    const double inv_s = 1.0 / cfg_.S;
    for (size_t k = 1; k < frames.size(); ++k) {
      V prev = t.constant(frames[k - 1]);
      V recon_k = t.constant_scalar(S(0));
      V kl_k = t.constant_scalar(S(0));
      for (int s = 0; s < cfg_.S; ++s) {
        Episode ep = begin_frame(t, b, prev, history, enc_states, onehot);
        for (int step = 1; step <= cfg_.T; ++step)
          frame_step_train(t, b, ep, frames[k], step, rng);
        recon_k = recon_k + reconstruction_loss(ep.canvas, frames[k]) * inv_s;
        kl_k = kl_k + kl_loss(t, ep.latents) * inv_s;
      }
      out.recon_per_frame.push_back(static_cast<double>(recon_k.scalar()));
      out.kl_per_frame.push_back(static_cast<double>(kl_k.scalar()));
      out.total = out.total + recon_k + kl_k * kl_weight;
      history = hist_.step(t, b.hist, history, t.constant(frames[k]));  // teacher forcing
    }
    return out;
  }

  // Autoregressive generation. The previous frame starts as the all-zero
  // start-of-video frame; each generated frame is fed back into the history.
  // At a schedule boundary the caption encoding is recomputed while the
  // history state and previous frame carry over unchanged. Optional
  // prime_frames are fed through the history/previous-frame pathways first
  // (future prediction).
  std::vector<MatD> generate_video(const std::vector<SegmentCond>& schedule, int n, Rng& rng,
                                   const std::vector<MatD>& prime_frames = {}) {
    if (n < 1) throw ConfigError("generate_video: n must be >= 1");
    if (cfg_.mode == ModelMode::Unsupervised) {
      if (!schedule.empty())
        throw ConfigError("caption schedule supplied in unsupervised mode");
    } else {
      if (schedule.empty()) throw ConfigError("generate_video: empty caption schedule");
      if (schedule[0].start_frame != 1)
        throw ConfigError("caption schedule must start at frame 1");
      for (size_t i = 1; i < schedule.size(); ++i)
        if (schedule[i].start_frame <= schedule[i - 1].start_frame)
          throw ConfigError("caption schedule indices must be increasing");
    }

    ad::Tape<S> t;
    Bound b = bind(t);
    auto history = hist_.init(t);
    V prev = t.constant(M::Zero(cfg_.C, cfg_.H * cfg_.W));
    for (const auto& f : prime_frames) {
      V fv = t.constant(f.template cast<S>());
      history = hist_.step(t, b.hist, history, fv);
      prev = fv;
    }

    std::vector<V> enc_states;
    V onehot;
    size_t seg = 0;
    std::vector<MatD> out;
    out.reserve(static_cast<size_t>(n));
    for (int k = 1; k <= n; ++k) {
      if (cfg_.mode != ModelMode::Unsupervised && seg < schedule.size() &&
          schedule[seg].start_frame == k) {
        enc_states = encode_segment(t, schedule[seg]);
        onehot = onehot_var(t, schedule[seg]);
        ++seg;
      }
      V frame = generate_frame(t, b, prev, history, enc_states, rng, onehot);
      out.push_back(frame.val().template cast<double>());
      history = hist_.step(t, b.hist, history, frame);
      prev = frame;
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore<S> params_;
  LangEncoder<S> lang_;
  HistoryEncoder<S> hist_;
  GlimpseFeatureNet<S> feat_prev_, feat_canvas_, feat_err_;
  SoftAttention<S> attn_long_, attn_short_;
  nn::Linear<S> read_head_, write_head_;
  nn::LstmCell<S> enc_lstm_, dec_lstm_;
  nn::Linear<S> mu_head_, logsigma_head_;
  nn::Linear<S> deconv_fc_;
  nn::ConvTranspose2d<S> deconv1_, deconv2_;
};

}  // namespace capvid
