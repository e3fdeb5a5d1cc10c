#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "capvid/vaecore.hpp"
#include "fd_check.hpp"

using namespace capvid;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

ModelConfig tiny_config(ModelMode mode = ModelMode::Captioned) {
  ModelConfig c;
  c.T = 2;
  c.d_z = 4;
  c.N = 3;
  c.d_lang = 8;
  c.d_emb = 5;
  c.d_v = 6;
  c.d_g = 7;
  c.d_enc = 10;
  c.d_dec = 9;
  c.H = c.W = 8;
  c.C = 1;
  c.glimpse_c1 = 2;
  c.glimpse_c2 = 3;
  c.hist_channels = 4;
  c.hist_down = 2;
  c.vocab_size = 8;
  c.mode = mode;
  return c;
}

std::vector<Eigen::MatrixXd> random_video(int n_with_sov, int C, int H, int W, Rng& rng) {
  std::vector<Eigen::MatrixXd> v;
  v.push_back(Eigen::MatrixXd::Zero(C, H * W));
  for (int i = 1; i < n_with_sov; ++i) {
    Eigen::MatrixXd f(C, H * W);
    for (int j = 0; j < H * W; ++j)
      for (int c = 0; c < C; ++c) f(c, j) = rng.uniform() > 0.8 ? rng.uniform() : 0.0;
    v.push_back(f);
  }
  return v;
}

typename CapVidModel<double>::SegmentCond tokens_cond(std::vector<int> tokens) {
  typename CapVidModel<double>::SegmentCond c;
  c.tokens = std::move(tokens);
  return c;
}

}  // namespace

TEST_CASE("zero write head yields the uniform 0.5 frame (logistic at zero canvas)") {
  auto cfg = tiny_config();
  cfg.T = 1;
  CapVidModel<double> model(cfg, 1);
  // Force all write outputs to zero through the deconv head parameters.
  model.params().entry("deconv2.w").value.setZero();
  model.params().entry("deconv2.b").value.setZero();

  Tape<double> t;
  auto b = model.bind(t);
  auto hist = model.history_encoder().init(t);
  auto enc = model.encode_segment(t, tokens_cond({1, 2, 3}));
  Rng rng(3);
  auto prev = t.constant(Mat<double>::Zero(1, 64));
  auto frame = model.generate_frame(t, b, prev, hist, enc, rng);
  REQUIRE(frame.rows() == 1);
  REQUIRE(frame.cols() == 64);
  for (int i = 0; i < 64; ++i) CHECK(frame.val()(0, i) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("posterior sigma is strictly positive for random states") {
  auto cfg = tiny_config();
  CapVidModel<double> model(cfg, 5);
  Rng jitter(7);
  for (auto& e : model.params().entries())
    for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] += 0.3 * jitter.gaussian();

  Tape<double> t;
  auto b = model.bind(t);
  auto hist = model.history_encoder().init(t);
  auto enc = model.encode_segment(t, tokens_cond({1, 4}));
  Rng rng(11);
  Eigen::MatrixXd target(1, 64);
  for (int i = 0; i < 64; ++i) target(0, i) = rng.uniform();
  auto ep = model.begin_frame(t, b, t.constant(Mat<double>::Zero(1, 64)), hist, enc);
  for (int step = 1; step <= cfg.T; ++step) {
    Mat<double> tgt = target;
    model.frame_step_train(t, b, ep, tgt, step, rng);
  }
  REQUIRE(ep.latents.size() == 2);
  for (auto& [mu, sigma] : ep.latents) CHECK(sigma.val().minCoeff() > 0.0);
}

TEST_CASE("generation is deterministic under a fixed seed and stochastic across seeds") {
  auto cfg = tiny_config();
  CapVidModel<double> model(cfg, 9);
  auto gen = [&](uint64_t seed) {
    Rng rng(seed);
    return model.generate_video({tokens_cond({1, 2, 3, 4})}, 3, rng);
  };
  auto a = gen(42), b = gen(42), c = gen(43);
  REQUIRE(a.size() == 3);
  for (size_t k = 0; k < 3; ++k) {
    CHECK((a[k] - b[k]).cwiseAbs().maxCoeff() == 0.0);  // bit-identical trajectory
    for (int i = 0; i < a[k].size(); ++i) {
      CHECK(a[k].data()[i] > 0.0);
      CHECK(a[k].data()[i] < 1.0);
    }
  }
  double l1 = 0;
  for (size_t k = 0; k < 3; ++k) l1 += (a[k] - c[k]).cwiseAbs().sum();
  CHECK(l1 > 0.0);
}

TEST_CASE("T timesteps produce exactly T canvas updates") {
  auto cfg = tiny_config();
  cfg.T = 10;
  CapVidModel<double> model(cfg, 13);
  Tape<double> t;
  auto b = model.bind(t);
  auto hist = model.history_encoder().init(t);
  auto enc = model.encode_segment(t, tokens_cond({2, 3}));
  Rng rng(5);
  auto ep = model.begin_frame(t, b, t.constant(Mat<double>::Zero(1, 64)), hist, enc);
  int updates = 0;
  int last_canvas = ep.canvas.id;
  for (int step = 1; step <= 10; ++step) {
    model.frame_step_generate(t, b, ep, step, rng);
    CHECK(ep.canvas.id != last_canvas);
    last_canvas = ep.canvas.id;
    ++updates;
  }
  CHECK(updates == 10);
  CHECK_THROWS_AS(model.frame_step_generate(t, b, ep, 11, rng), ConfigError);
}

TEST_CASE("generate_video: frame counts, variable length, schedule switching") {
  auto cfg = tiny_config();
  CapVidModel<double> model(cfg, 17);

  Rng r1(7);
  auto v15 = model.generate_video({tokens_cond({1, 2, 3, 4, 5, 6, 7})}, 15, r1);
  CHECK(v15.size() == 15);

  // Variable length: far beyond any training length, no error.
  Rng r2(7);
  auto v30 = model.generate_video({tokens_cond({1, 2, 3})}, 30, r2);
  CHECK(v30.size() == 30);

  // Caption switch at frame 8: frames 1..7 must be bit-identical to a run
  // that never switches, and the carried state continues the generation.
  auto c1 = tokens_cond({1, 2, 3});
  auto c2 = tokens_cond({4, 5, 6});
  c2.start_frame = 8;
  Rng ra(99), rb(99);
  auto switched = model.generate_video({c1, c2}, 10, ra);
  auto plain = model.generate_video({c1}, 10, rb);
  REQUIRE(switched.size() == 10);
  for (int k = 0; k < 7; ++k)
    CHECK((switched[static_cast<size_t>(k)] - plain[static_cast<size_t>(k)]).cwiseAbs().maxCoeff() == 0.0);
  // After the boundary the conditioning differs, so frames diverge.
  double diff = 0;
  for (int k = 7; k < 10; ++k)
    diff += (switched[static_cast<size_t>(k)] - plain[static_cast<size_t>(k)]).cwiseAbs().sum();
  CHECK(diff > 0.0);

  // Prefix invariance: generating fewer frames yields the same prefix.
  Rng rc(99);
  auto short_run = model.generate_video({c1, c2}, 8, rc);
  for (int k = 0; k < 8; ++k)
    CHECK((short_run[static_cast<size_t>(k)] - switched[static_cast<size_t>(k)]).cwiseAbs().maxCoeff() == 0.0);

  // Schedule validation.
  auto bad = c2;
  bad.start_frame = 1;
  CHECK_THROWS_AS(model.generate_video({c1, bad}, 10, r1), ConfigError);
  CHECK_THROWS_AS(model.generate_video({}, 10, r1), ConfigError);
  auto not_first = tokens_cond({1});
  not_first.start_frame = 2;
  CHECK_THROWS_AS(model.generate_video({not_first}, 5, r1), ConfigError);
}

TEST_CASE("unsupervised mode: no caption pathway, caption supply is an error") {
  auto cfg = tiny_config(ModelMode::Unsupervised);
  cfg.vocab_size = 0;
  CapVidModel<double> model(cfg, 23);

  Rng rng(3);
  auto v = model.generate_video({}, 4, rng);
  CHECK(v.size() == 4);

  Rng rng2(3);
  auto v2 = model.generate_video({}, 4, rng2);
  for (size_t k = 0; k < 4; ++k) CHECK((v[k] - v2[k]).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(model.generate_video({tokens_cond({1})}, 4, rng), ConfigError);

  // total_loss with caption tokens is rejected in unsupervised mode.
  Tape<double> t;
  auto b = model.bind(t);
  Rng fr(5);
  auto frames = random_video(3, 1, 8, 8, fr);
  Rng lr(6);
  CHECK_THROWS_AS(model.total_loss(t, b, frames, tokens_cond({1}), lr), ConfigError);
  auto loss = model.total_loss(t, b, frames, {}, lr);
  CHECK(std::isfinite(loss.total.scalar()));
}

TEST_CASE("reconstruction_loss closed forms") {
  Tape<double> t;
  // p = 0.5 everywhere: loss = H*W*C*ln2.
  auto canvas = t.constant(Mat<double>::Zero(1, 64));
  Mat<double> target(1, 64);
  Rng rng(3);
  for (int i = 0; i < 64; ++i) target(0, i) = rng.uniform();
  auto loss = CapVidModel<double>::reconstruction_loss(canvas, target);
  CHECK(loss.scalar() == doctest::Approx(64.0 * std::log(2.0)).epsilon(1e-12));

  // y == p with y binary and p clamped: loss ~ 0 within clamp tolerance.
  Mat<double> big(1, 4);
  big << 40.0, -40.0, 40.0, -40.0;
  Mat<double> ybin(1, 4);
  ybin << 1.0, 0.0, 1.0, 0.0;
  auto loss2 = CapVidModel<double>::reconstruction_loss(t.constant(big), ybin);
  CHECK(loss2.scalar() == doctest::Approx(0.0).epsilon(1e-7));

  // Random 3x3 case against a direct per-pixel clamped oracle.
  Mat<double> logits(1, 9), y(1, 9);
  for (int i = 0; i < 9; ++i) {
    logits(0, i) = rng.gaussian() * 2;
    y(0, i) = rng.uniform();
  }
  double oracle = 0;
  for (int i = 0; i < 9; ++i) {
    double p = 1.0 / (1.0 + std::exp(-logits(0, i)));
    p = std::clamp(p, 1e-7, 1.0 - 1e-7);
    oracle += -(y(0, i) * std::log(p) + (1 - y(0, i)) * std::log(1 - p));
  }
  auto loss3 = CapVidModel<double>::reconstruction_loss(t.constant(logits), y);
  CHECK(loss3.scalar() == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("kl_loss closed forms and Monte Carlo oracle") {
  Tape<double> t;
  auto mk = [&](std::initializer_list<double> vals, int d) {
    Mat<double> m(d, 1);
    int i = 0;
    for (double v : vals) m(i++, 0) = v;
    return t.constant(m);
  };

  // mu = 0, sigma = 1: prior equals posterior, KL = 0.
  {
    std::vector<std::pair<Var<double>, Var<double>>> lat = {
        {mk({0, 0, 0}, 3), mk({1, 1, 1}, 3)}};
    CHECK(CapVidModel<double>::kl_loss(t, lat).scalar() == doctest::Approx(0.0).epsilon(1e-12));
  }

  // T=1, d_z=1, mu=1, sigma=1: 0.5 exactly.
  {
    std::vector<std::pair<Var<double>, Var<double>>> lat = {{mk({1}, 1), mk({1}, 1)}};
    CHECK(CapVidModel<double>::kl_loss(t, lat).scalar() == doctest::Approx(0.5).epsilon(1e-12));
  }

  // Nonpositive sigma rejected.
  {
    std::vector<std::pair<Var<double>, Var<double>>> lat = {{mk({0}, 1), mk({0.0}, 1)}};
    CHECK_THROWS_AS(CapVidModel<double>::kl_loss(t, lat), ConfigError);
  }

  // Random (mu, sigma), d_z=2, T=3 against a 10^6-sample Monte Carlo estimate
  // of E_q[log q - log p].
  {
    Rng rng(31);
    std::vector<std::pair<Var<double>, Var<double>>> lat;
    std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> raw;
    for (int i = 0; i < 3; ++i) {
      Eigen::Vector2d mu(rng.gaussian(), rng.gaussian());
      Eigen::Vector2d sg(std::exp(0.4 * rng.gaussian()), std::exp(0.4 * rng.gaussian()));
      raw.emplace_back(mu, sg);
      lat.emplace_back(mk({mu(0), mu(1)}, 2), mk({sg(0), sg(1)}, 2));
    }
    const double closed = CapVidModel<double>::kl_loss(t, lat).scalar();

    const int n = 1000000;
    double acc = 0, acc2 = 0;
    Rng mc(77);
    for (int s = 0; s < n; ++s) {
      double term = 0;
      for (auto& [mu, sg] : raw)
        for (int j = 0; j < 2; ++j) {
          const double eps = mc.gaussian();
          const double z = mu(j) + sg(j) * eps;
          // log q(z) - log p(z) for the diagonal gaussians.
          term += -std::log(sg(j)) - 0.5 * eps * eps + 0.5 * z * z;
        }
      acc += term;
      acc2 += term * term;
    }
    const double mean = acc / n;
    const double se = std::sqrt((acc2 / n - mean * mean) / n);
    CHECK(std::abs(closed - mean) <= 3.0 * se);
  }
}

TEST_CASE("reparameterized samples match (mu, sigma) within 3 standard errors") {
  Tape<double> t;
  Mat<double> mu(2, 1), sigma(2, 1);
  mu << 0.7, -1.2;
  sigma << 0.5, 2.0;
  auto vmu = t.constant(mu), vsigma = t.constant(sigma);
  Rng rng(13);
  const int n = 100000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sum2 = Eigen::Vector2d::Zero();
  for (int s = 0; s < n; ++s) {
    Mat<double> eps(2, 1);
    eps << rng.gaussian(), rng.gaussian();
    auto z = vmu + ad::cmul(vsigma, t.constant(eps));
    for (int j = 0; j < 2; ++j) {
      sum(j) += z.val()(j, 0);
      sum2(j) += z.val()(j, 0) * z.val()(j, 0);
    }
    t.clear();
    vmu = t.constant(mu);
    vsigma = t.constant(sigma);
  }
  for (int j = 0; j < 2; ++j) {
    const double mean = sum(j) / n;
    const double var = sum2(j) / n - mean * mean;
    const double se_mean = sigma(j, 0) / std::sqrt(n);
    CHECK(std::abs(mean - mu(j, 0)) <= 3 * se_mean);
    const double se_var = sigma(j, 0) * sigma(j, 0) * std::sqrt(2.0 / n);
    CHECK(std::abs(var - sigma(j, 0) * sigma(j, 0)) <= 3 * se_var);
  }
}

TEST_CASE("total_loss: composed closed form, additivity, finiteness") {
  auto cfg = tiny_config();
  cfg.T = 1;
  CapVidModel<double> model(cfg, 29);

  // All-zero parameters force p = 0.5, mu = 0, sigma = 1: the loss of a
  // single random frame is exactly H*W*C*ln2.
  for (auto& e : model.params().entries()) e.value.setZero();
  {
    Tape<double> t;
    auto b = model.bind(t);
    Rng fr(3);
    auto frames = random_video(2, 1, 8, 8, fr);
    Rng lr(4);
    auto loss = model.total_loss(t, b, frames, tokens_cond({1, 2}), lr);
    CHECK(loss.total.scalar() == doctest::Approx(64.0 * std::log(2.0)).epsilon(1e-9));
    CHECK(loss.kl_per_frame[0] == doctest::Approx(0.0).epsilon(1e-12));
  }

  // Random parameters: finite loss, per-frame breakdown sums to the total.
  CapVidModel<double> m2(tiny_config(), 31);
  Rng jit(5);
  for (auto& e : m2.params().entries())
    for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] += 0.1 * jit.gaussian();
  Tape<double> t;
  auto b = m2.bind(t);
  Rng fr(6);
  auto frames = random_video(4, 1, 8, 8, fr);
  Rng lr(7);
  auto loss = m2.total_loss(t, b, frames, tokens_cond({1, 2, 3}), lr);
  CHECK(std::isfinite(loss.total.scalar()));
  double acc = 0;
  for (size_t k = 0; k < loss.recon_per_frame.size(); ++k)
    acc += loss.recon_per_frame[k] + loss.kl_per_frame[k];
  CHECK(acc == doctest::Approx(loss.total.scalar()).epsilon(1e-9));
  CHECK(loss.recon_per_frame.size() == 3);
}

TEST_CASE("end-to-end gradients pass finite differences (captioned tiny config)") {
  CapVidModel<double> model(tiny_config(), 37);
  Rng jit(3);
  testutil::jitter_params(model.params(), jit);
  Rng fr(11);
  auto frames = random_video(3, 1, 8, 8, fr);
  auto cond = tokens_cond({1, 3, 2});

  auto forward = [&]() {
    Tape<double> t;
    auto b = model.bind(t);
    Rng lr(55);
    return model.total_loss(t, b, frames, cond, lr).total.scalar();
  };
  model.params().zero_grad();
  {
    Tape<double> t;
    auto b = model.bind(t);
    Rng lr(55);
    auto loss = model.total_loss(t, b, frames, cond, lr);
    t.backward(loss.total);
  }
  Rng pick(91);
  auto rep = testutil::fd_check_all(model.params(), forward, pick, 3, 1e-5, 1e-3);
  INFO(rep.worst_where);
  CHECK(rep.failed == 0);
  CHECK(rep.checked >= 100);
}

TEST_CASE("unsupervised and onehot modes: shapes and gradients") {
  for (auto mode : {ModelMode::Unsupervised, ModelMode::OnehotBaseline,
                    ModelMode::AblateLongCaption, ModelMode::AblateShortCaption}) {
    CAPTURE(mode_to_string(mode));
    auto cfg = tiny_config(mode);
    if (mode == ModelMode::Unsupervised) cfg.vocab_size = 0;
    CapVidModel<double> model(cfg, 41);
    Rng jit(4);
    testutil::jitter_params(model.params(), jit);
    Rng fr(12);
    auto frames = random_video(3, 1, 8, 8, fr);
    typename CapVidModel<double>::SegmentCond cond;
    if (mode == ModelMode::OnehotBaseline) {
      cond.onehot.assign(12, 0.0);
      cond.onehot[3] = 1.0;
      cond.onehot[10] = 1.0;
    } else if (mode != ModelMode::Unsupervised) {
      cond.tokens = {1, 2, 4};
    }

    auto forward = [&]() {
      Tape<double> t;
      auto b = model.bind(t);
      Rng lr(66);
      return model.total_loss(t, b, frames, cond, lr).total.scalar();
    };
    model.params().zero_grad();
    {
      Tape<double> t;
      auto b = model.bind(t);
      Rng lr(66);
      auto loss = model.total_loss(t, b, frames, cond, lr);
      CHECK(std::isfinite(loss.total.scalar()));
      t.backward(loss.total);
    }
    Rng pick(14);
    auto rep = testutil::fd_check_all(model.params(), forward, pick, 2, 1e-5, 1e-3);
    INFO(rep.worst_where);
    CHECK(rep.failed == 0);
  }
}

TEST_CASE("future-prediction priming feeds history and previous frame") {
  auto cfg = tiny_config();
  CapVidModel<double> model(cfg, 43);
  Rng fr(9);
  auto video = random_video(6, 1, 8, 8, fr);
  std::vector<Eigen::MatrixXd> prime(video.begin() + 1, video.begin() + 5);

  Rng r1(3);
  auto pred = model.generate_video({tokens_cond({1, 2})}, 3, r1, prime);
  CHECK(pred.size() == 3);

  // Different priming changes the prediction.
  Rng r2(3);
  std::vector<Eigen::MatrixXd> other_prime(video.begin() + 1, video.begin() + 3);
  auto pred2 = model.generate_video({tokens_cond({1, 2})}, 3, r2, other_prime);
  double diff = 0;
  for (size_t k = 0; k < 3; ++k) diff += (pred[k] - pred2[k]).cwiseAbs().sum();
  CHECK(diff > 0.0);
}

TEST_CASE("S > 1 averages likelihood samples") {
  auto cfg = tiny_config();
  cfg.S = 3;
  CapVidModel<double> model(cfg, 47);
  Tape<double> t;
  auto b = model.bind(t);
  Rng fr(8);
  auto frames = random_video(2, 1, 8, 8, fr);
  Rng lr(9);
  auto loss = model.total_loss(t, b, frames, tokens_cond({2, 3}), lr);
  CHECK(std::isfinite(loss.total.scalar()));
  CHECK(loss.recon_per_frame.size() == 1);
}
