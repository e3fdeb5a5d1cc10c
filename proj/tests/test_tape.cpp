#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "capvid/nn.hpp"
#include "capvid/params.hpp"
#include "capvid/tape.hpp"
#include "capvid/tape_conv.hpp"
#include "fd_check.hpp"

using namespace capvid;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat<double> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.gaussian() * scale;
  return m;
}

// FD-checks a scalar-valued graph of one or two parameter matrices.
template <class Builder>
void check_graph(const char* name, std::vector<std::pair<int, int>> shapes, Builder build,
                 uint64_t seed = 7, double scale = 0.7) {
  Rng rng(seed);
  ParamStore<double> ps;
  for (size_t i = 0; i < shapes.size(); ++i) {
    int id = ps.add("p" + std::to_string(i), shapes[i].first, shapes[i].second);
    ps.entry(id).value = random_mat(shapes[i].first, shapes[i].second, rng, scale);
  }
  auto forward = [&]() {
    Tape<double> t;
    std::vector<Var<double>> vars;
    for (size_t i = 0; i < shapes.size(); ++i) vars.push_back(ps.use(t, static_cast<int>(i)));
    return build(t, vars).scalar();
  };
  ps.zero_grad();
  {
    Tape<double> t;
    std::vector<Var<double>> vars;
    for (size_t i = 0; i < shapes.size(); ++i) vars.push_back(ps.use(t, static_cast<int>(i)));
    auto loss = build(t, vars);
    t.backward(loss);
  }
  Rng pick(seed + 100);
  auto rep = testutil::fd_check_all(ps, forward, pick, 6);
  INFO(name << ": " << rep.worst_where);
  CHECK(rep.failed == 0);
  CHECK(rep.checked > 0);
}

}  // namespace

TEST_CASE("elementwise and matmul forward values") {
  Tape<double> t;
  Mat<double> a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  auto va = t.constant(a), vb = t.constant(b);
  CHECK((va + vb).val()(1, 1) == doctest::Approx(12));
  CHECK((va - vb).val()(0, 0) == doctest::Approx(-4));
  CHECK(ad::cmul(va, vb).val()(0, 1) == doctest::Approx(12));
  CHECK((va * vb).val()(0, 0) == doctest::Approx(19));
  CHECK(ad::transpose(va).val()(0, 1) == doctest::Approx(3));
  CHECK(ad::sum(va).scalar() == doctest::Approx(10));
  CHECK(ad::rowsum(va).val()(1, 0) == doctest::Approx(7));
}

TEST_CASE("gradients: arithmetic ops") {
  check_graph("add/cmul", {{3, 2}, {3, 2}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::cmul(v[0] + v[1], v[0] - v[1]));
  });
  check_graph("matmul", {{3, 4}, {4, 2}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::square(v[0] * v[1]));
  });
  check_graph("cdiv", {{3, 3}, {3, 3}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::cdiv(v[0], v[1] + 5.0));
  });
  check_graph("smul/reciprocal", {{1, 1}, {4, 3}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::smul(ad::reciprocal(v[0] + 3.0), ad::square(v[1])));
  });
  check_graph("scalar const ops", {{2, 5}}, [](Tape<double>& t, auto& v) {
    return ad::sum((v[0] * 2.5 + 1.25) - 0.5);
  });
}

TEST_CASE("gradients: transcendental ops") {
  check_graph("tanh", {{4, 3}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::tanh(v[0]));
  });
  check_graph("sigmoid", {{4, 3}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::square(ad::sigmoid(v[0])));
  });
  check_graph("exp/log", {{3, 3}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::log(ad::exp(v[0]) + 2.0));
  });
  check_graph("relu", {{5, 5}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::square(ad::relu(v[0])));
  });
}

TEST_CASE("gradients: structure ops") {
  check_graph("vstack/rows", {{3, 2}, {2, 2}}, [](Tape<double>& t, auto& v) {
    auto s = ad::vstack<double>({v[0], v[1]});
    return ad::sum(ad::square(ad::rows(s, 1, 3)));
  });
  check_graph("hstack", {{2, 2}, {2, 3}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::square(ad::hstack<double>({v[0], v[1]})));
  });
  check_graph("reshape", {{3, 4}}, [](Tape<double>& t, auto& v) {
    auto r = ad::reshape(v[0], 2, 6);
    Mat<double> w = Mat<double>::Ones(6, 1);
    return ad::sum(ad::square(r * t.constant(w)));
  });
  check_graph("bcast_col/rowsum", {{4, 1}, {4, 5}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::cmul(ad::bcast_col(v[0], 5), v[1]));
  });
  check_graph("transpose", {{3, 4}}, [](Tape<double>& t, auto& v) {
    return ad::sum(ad::square(ad::transpose(v[0]) * v[0]));
  });
}

TEST_CASE("reshape is row-major") {
  Tape<double> t;
  Mat<double> a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  auto r = ad::reshape(t.constant(a), 3, 2);
  CHECK(r.val()(0, 0) == 1);
  CHECK(r.val()(0, 1) == 2);
  CHECK(r.val()(1, 0) == 3);
  CHECK(r.val()(2, 1) == 6);
}

TEST_CASE("diamond graph accumulates both paths") {
  ParamStore<double> ps;
  int id = ps.add("x", 1, 1);
  ps.entry(id).value(0, 0) = 0.3;
  Tape<double> t;
  auto x = ps.use(t, id);
  auto y = ad::cmul(x, x) + ad::tanh(x);  // y = x^2 + tanh(x)
  t.backward(y);
  double expect = 2 * 0.3 + (1 - std::tanh(0.3) * std::tanh(0.3));
  CHECK(ps.entry(id).grad(0, 0) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("softmax_col lies on the simplex and matches direct evaluation") {
  Rng rng(3);
  Tape<double> t;
  Mat<double> logits = random_mat(7, 1, rng, 3.0);
  auto sm = ad::softmax_col(t.constant(logits));
  double total = 0;
  double denom = 0;
  double mx = logits.maxCoeff();
  for (int i = 0; i < 7; ++i) denom += std::exp(logits(i, 0) - mx);
  for (int i = 0; i < 7; ++i) {
    double direct = std::exp(logits(i, 0) - mx) / denom;
    CHECK(sm.val()(i, 0) == doctest::Approx(direct).epsilon(1e-12));
    CHECK(sm.val()(i, 0) >= 0);
    total += sm.val()(i, 0);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

  check_graph("softmax grad", {{6, 1}}, [](Tape<double>& t2, auto& v) {
    Mat<double> w(1, 6);
    w << 0.3, -0.2, 0.8, 0.1, -0.5, 0.4;
    return t2.constant(w) * ad::softmax_col(v[0]);
  });
}

TEST_CASE("conv2d forward matches naive loop") {
  Rng rng(11);
  ad::ConvGeom g;
  g.in_ch = 2;
  g.in_h = 5;
  g.in_w = 6;
  g.out_ch = 3;
  g.kh = 3;
  g.kw = 3;
  g.stride = 2;
  g.pad = 1;
  Mat<double> x = random_mat(g.in_ch, g.in_h * g.in_w, rng);
  Mat<double> w = random_mat(g.out_ch, g.patch_rows(), rng);
  Mat<double> b = random_mat(g.out_ch, 1, rng);

  Tape<double> t;
  auto y = ad::conv2d(t.constant(x), t.constant(w), t.constant(b), g);
  REQUIRE(y.rows() == g.out_ch);
  REQUIRE(y.cols() == g.out_h() * g.out_w());

  for (int oc = 0; oc < g.out_ch; ++oc) {
    for (int oy = 0; oy < g.out_h(); ++oy) {
      for (int ox = 0; ox < g.out_w(); ++ox) {
        double acc = b(oc, 0);
        for (int ic = 0; ic < g.in_ch; ++ic)
          for (int ky = 0; ky < g.kh; ++ky)
            for (int kx = 0; kx < g.kw; ++kx) {
              int iy = oy * g.stride - g.pad + ky;
              int ix = ox * g.stride - g.pad + kx;
              if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
              acc += w(oc, ic * 9 + ky * 3 + kx) * x(ic, iy * g.in_w + ix);
            }
        CHECK(y.val()(oc, oy * g.out_w() + ox) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("conv2d and conv2d_transpose gradients") {
  ad::ConvGeom g;
  g.in_ch = 2;
  g.in_h = 4;
  g.in_w = 4;
  g.out_ch = 3;
  g.stride = 2;
  g.pad = 1;
  check_graph("conv2d", {{2, 16}, {3, 18}, {3, 1}}, [g](Tape<double>& t, auto& v) {
    return ad::sum(ad::square(ad::conv2d(v[0], v[1], v[2], g)));
  });
  check_graph("conv2d_transpose", {{3, 4}, {3, 18}, {2, 1}}, [g](Tape<double>& t, auto& v) {
    return ad::sum(ad::square(ad::conv2d_transpose(v[0], v[1], v[2], g)));
  });
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  Rng rng(23);
  ad::ConvGeom g;
  g.in_ch = 2;
  g.in_h = 6;
  g.in_w = 5;
  g.out_ch = 4;
  g.stride = 2;
  g.pad = 1;
  Mat<double> x = random_mat(g.in_ch, g.in_h * g.in_w, rng);
  Mat<double> y = random_mat(g.out_ch, g.out_h() * g.out_w(), rng);
  Mat<double> w = random_mat(g.out_ch, g.patch_rows(), rng);
  Mat<double> zb_out = Mat<double>::Zero(g.out_ch, 1);
  Mat<double> zb_in = Mat<double>::Zero(g.in_ch, 1);

  Tape<double> t;
  auto cx = ad::conv2d(t.constant(x), t.constant(w), t.constant(zb_out), g);
  auto cty = ad::conv2d_transpose(t.constant(y), t.constant(w), t.constant(zb_in), g);
  double lhs = (cx.val().cwiseProduct(y)).sum();
  double rhs = (x.cwiseProduct(cty.val())).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("bce_with_logits_sum matches clamped per-pixel oracle") {
  Rng rng(5);
  Mat<double> logits = random_mat(3, 3, rng, 2.0);
  Mat<double> target(3, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) target(i, j) = rng.uniform();

  double oracle = 0;
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) {
      double p = 1.0 / (1.0 + std::exp(-logits(i, j)));
      p = std::min(1.0 - 1e-7, std::max(1e-7, p));
      oracle += -(target(i, j) * std::log(p) + (1 - target(i, j)) * std::log(1 - p));
    }

  Tape<double> t;
  auto loss = ad::bce_with_logits_sum(t.constant(logits), target);
  CHECK(loss.scalar() == doctest::Approx(oracle).epsilon(1e-10));

  Mat<double> tgt = target;
  check_graph("bce grad", {{3, 3}}, [tgt](Tape<double>& t2, auto& v) {
    return ad::bce_with_logits_sum(v[0], tgt);
  });
}

TEST_CASE("bce at logit zero is ln2 per pixel") {
  Tape<double> t;
  Mat<double> logits = Mat<double>::Zero(4, 4);
  Mat<double> target(4, 4);
  Rng rng(9);
  for (int j = 0; j < 4; ++j)
    for (int i = 0; i < 4; ++i) target(i, j) = rng.uniform();
  auto loss = ad::bce_with_logits_sum(t.constant(logits), target);
  CHECK(loss.scalar() == doctest::Approx(16.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("linear and lstm cell gradients") {
  Rng rng(17);
  ParamStore<double> ps;
  nn::Linear<double> lin(ps, "lin", 5, 3, rng);
  nn::LstmCell<double> cell(ps, "lstm", 3, 4, rng);
  Mat<double> x0 = random_mat(5, 1, rng);

  auto build = [&](Tape<double>& t) {
    auto bl = lin.bind(ps, t);
    auto bc = cell.bind(ps, t);
    auto s = bc.zero_state(t);
    auto u = ad::tanh(bl(t.constant(x0)));
    s = bc.step(u, s);
    s = bc.step(u, s);  // two steps exercise the recurrence
    return ad::sum(ad::square(s.h)) + ad::sum(ad::square(s.c));
  };
  auto forward = [&]() {
    Tape<double> t;
    return build(t).scalar();
  };
  ps.zero_grad();
  {
    Tape<double> t;
    auto loss = build(t);
    t.backward(loss);
  }
  Rng pick(99);
  auto rep = testutil::fd_check_all(ps, forward, pick, 8);
  INFO(rep.worst_where);
  CHECK(rep.failed == 0);
}

TEST_CASE("adam converges on a quadratic") {
  ParamStore<double> ps;
  int id = ps.add("x", 1, 1);
  ps.entry(id).value(0, 0) = 4.0;
  AdamOptimizer<double> opt(0.1, 0.0);
  for (int i = 0; i < 400; ++i) {
    ps.zero_grad();
    Tape<double> t;
    auto x = ps.use(t, id);
    auto loss = ad::square(x - 3.0);
    t.backward(loss);
    opt.step(ps);
  }
  CHECK(ps.entry(id).value(0, 0) == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("gradient-norm clipping bounds the applied update") {
  ParamStore<double> ps;
  int id = ps.add("x", 2, 1);
  ps.entry(id).value << 1.0, 1.0;
  ps.entry(id).grad << 300.0, 400.0;  // norm 500
  AdamOptimizer<double> opt(1.0, 5.0);
  double norm = opt.step(ps);
  CHECK(norm == doctest::Approx(500.0));
  // After clipping the gradient has norm 5; Adam's first step is lr-scaled
  // elementwise sign-ish update, bounded by lr.
  CHECK(std::abs(ps.entry(id).value(0, 0) - 1.0) <= 1.0 + 1e-9);
}
