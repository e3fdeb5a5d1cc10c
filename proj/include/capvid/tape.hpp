#pragma once

#include <Eigen/Dense>
#include <functional>
#include <utility>
#include <vector>

#include "capvid/errors.hpp"

namespace capvid::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
class Tape;

// Handle to a tape node. Cheap to copy; valid until the owning tape is
// destroyed or cleared.
template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<S>& val() const { return tape->val(id); }
  const Mat<S>& grad() const { return tape->grad_of(id); }
  int rows() const { return static_cast<int>(val().rows()); }
  int cols() const { return static_cast<int>(val().cols()); }
  S scalar() const { return val()(0, 0); }
};

// Define-by-run reverse-mode tape over dense Eigen matrices. Nodes are
// appended in evaluation order, which is already a topological order, so the
// backward pass is a single reverse sweep.
template <class S>
class Tape {
 public:
  using M = Mat<S>;

  Var<S> make(M value) {
    nodes_.push_back(Node{std::move(value), M(), nullptr});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<S> constant(M value) { return make(std::move(value)); }

  Var<S> constant_scalar(S v) {
    M m(1, 1);
    m(0, 0) = v;
    return make(std::move(m));
  }

  // Leaf whose gradient is accumulated into an external matrix (a parameter
  // store slot). The sink must outlive the backward pass.
  Var<S> leaf(const M& value, M* grad_sink) {
    Var<S> out = make(value);
    int id = out.id;
    nodes_[id].back = [this, id, grad_sink]() { *grad_sink += nodes_[id].grad; };
    return out;
  }

  void set_back(Var<S> v, std::function<void()> fn) { nodes_[v.id].back = std::move(fn); }

  const M& val(int id) const { return nodes_[id].value; }

  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }

  const M& grad_of(int id) const { return nodes_[id].grad; }

  // Accumulates a gradient contribution into node `id`.
  template <class Expr>
  void accum(int id, const Expr& e) {
    M& g = nodes_[id].grad;
    if (g.size() == 0) {
      g = e;
    } else {
      g += e;
    }
  }

  // Seeds the (1x1) root with gradient one and sweeps the tape in reverse.
  void backward(Var<S> root) {
    if (root.tape != this) throw ShapeError("backward: var from another tape");
    if (nodes_[root.id].value.size() != 1)
      throw ShapeError("backward: root must be a scalar node");
    M seed(1, 1);
    seed(0, 0) = S(1);
    accum(root.id, seed);
    for (int i = root.id; i >= 0; --i) {
      if (nodes_[i].grad.size() == 0) continue;
      if (nodes_[i].back) nodes_[i].back();
    }
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    M value;
    M grad;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
};

namespace detail {
template <class S>
inline void check_same_tape(const Var<S>& a, const Var<S>& b) {
  if (a.tape != b.tape) throw ShapeError("operands live on different tapes");
}
template <class S>
inline void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}
}  // namespace detail

// ---- elementwise binary ----

template <class S>
Var<S> operator+(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val() + b.val());
  t.set_back(out, [&t, oa = a.id, ob = b.id, o = out.id]() {
    t.accum(oa, t.grad_of(o));
    t.accum(ob, t.grad_of(o));
  });
  return out;
}

template <class S>
Var<S> operator-(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val() - b.val());
  t.set_back(out, [&t, oa = a.id, ob = b.id, o = out.id]() {
    t.accum(oa, t.grad_of(o));
    t.accum(ob, -t.grad_of(o));
  });
  return out;
}

template <class S>
Var<S> operator-(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(-a.val());
  t.set_back(out, [&t, oa = a.id, o = out.id]() { t.accum(oa, -t.grad_of(o)); });
  return out;
}

// Elementwise (Hadamard) product.
template <class S>
Var<S> cmul(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "cmul");
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().cwiseProduct(b.val()));
  t.set_back(out, [&t, oa = a.id, ob = b.id, o = out.id]() {
    t.accum(oa, t.grad_of(o).cwiseProduct(t.val(ob)));
    t.accum(ob, t.grad_of(o).cwiseProduct(t.val(oa)));
  });
  return out;
}

// Elementwise quotient.
template <class S>
Var<S> cdiv(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "cdiv");
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().cwiseQuotient(b.val()));
  t.set_back(out, [&t, oa = a.id, ob = b.id, o = out.id]() {
    t.accum(oa, t.grad_of(o).cwiseQuotient(t.val(ob)));
    t.accum(ob, -t.grad_of(o).cwiseProduct(t.val(o)).cwiseQuotient(t.val(ob)));
  });
  return out;
}

// ---- matrix product ----

template <class S>
Var<S> operator*(Var<S> a, Var<S> b) {
  detail::check_same_tape(a, b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val() * b.val());
  t.set_back(out, [&t, oa = a.id, ob = b.id, o = out.id]() {
    t.accum(oa, t.grad_of(o) * t.val(ob).transpose());
    t.accum(ob, t.val(oa).transpose() * t.grad_of(o));
  });
  return out;
}

// ---- scalar-constant arithmetic ----

template <class S>
Var<S> operator*(Var<S> a, double c) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val() * static_cast<S>(c));
  t.set_back(out, [&t, oa = a.id, o = out.id, c]() {
    t.accum(oa, t.grad_of(o) * static_cast<S>(c));
  });
  return out;
}

template <class S>
Var<S> operator*(double c, Var<S> a) {
  return a * c;
}

template <class S>
Var<S> operator+(Var<S> a, double c) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().array() + static_cast<S>(c));
  t.set_back(out, [&t, oa = a.id, o = out.id]() { t.accum(oa, t.grad_of(o)); });
  return out;
}

template <class S>
Var<S> operator-(Var<S> a, double c) {
  return a + (-c);
}

// Broadcast product of a 1x1 var with a matrix var.
template <class S>
Var<S> smul(Var<S> s, Var<S> m) {
  detail::check_same_tape(s, m);
  if (s.val().size() != 1) throw ShapeError("smul: first operand must be 1x1");
  Tape<S>& t = *s.tape;
  Var<S> out = t.make(s.scalar() * m.val());
  t.set_back(out, [&t, os = s.id, om = m.id, o = out.id]() {
    Mat<S> gs(1, 1);
    gs(0, 0) = (t.grad_of(o).cwiseProduct(t.val(om))).sum();
    t.accum(os, gs);
    t.accum(om, t.val(os)(0, 0) * t.grad_of(o));
  });
  return out;
}

// ---- elementwise transcendental ----

template <class S>
Var<S> tanh(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().array().tanh().matrix());
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    t.accum(oa, t.grad_of(o).cwiseProduct(
                    (Mat<S>::Ones(t.val(o).rows(), t.val(o).cols()) -
                     t.val(o).cwiseProduct(t.val(o)))));
  });
  return out;
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> y = (S(1) / (S(1) + (-a.val().array()).exp())).matrix();
  Var<S> out = t.make(std::move(y));
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    const Mat<S>& v = t.val(o);
    t.accum(oa, t.grad_of(o).cwiseProduct(v.cwiseProduct(
                    (Mat<S>::Ones(v.rows(), v.cols()) - v))));
  });
  return out;
}

template <class S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().cwiseMax(S(0)));
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    Mat<S> mask = (t.val(oa).array() > S(0)).template cast<S>().matrix();
    t.accum(oa, t.grad_of(o).cwiseProduct(mask));
  });
  return out;
}

template <class S>
Var<S> exp(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().array().exp().matrix());
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    t.accum(oa, t.grad_of(o).cwiseProduct(t.val(o)));
  });
  return out;
}

template <class S>
Var<S> log(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().array().log().matrix());
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    t.accum(oa, t.grad_of(o).cwiseQuotient(t.val(oa)));
  });
  return out;
}

template <class S>
Var<S> square(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().cwiseProduct(a.val()));
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    t.accum(oa, S(2) * t.grad_of(o).cwiseProduct(t.val(oa)));
  });
  return out;
}

template <class S>
Var<S> reciprocal(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().cwiseInverse());
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    t.accum(oa, -t.grad_of(o).cwiseProduct(t.val(o).cwiseProduct(t.val(o))));
  });
  return out;
}

// ---- reductions and broadcasts ----

template <class S>
Var<S> sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  Mat<S> m(1, 1);
  m(0, 0) = a.val().sum();
  Var<S> out = t.make(std::move(m));
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    const Mat<S>& va = t.val(oa);
    t.accum(oa, Mat<S>::Constant(va.rows(), va.cols(), t.grad_of(o)(0, 0)));
  });
  return out;
}

// Row sums: (R,C) -> (R,1).
template <class S>
Var<S> rowsum(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().rowwise().sum());
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    t.accum(oa, t.grad_of(o).replicate(1, t.val(oa).cols()));
  });
  return out;
}

// Replicates a column vector (R,1) into (R,C).
template <class S>
Var<S> bcast_col(Var<S> v, int cols) {
  if (v.cols() != 1) throw ShapeError("bcast_col: operand must be a column");
  Tape<S>& t = *v.tape;
  Var<S> out = t.make(v.val().replicate(1, cols));
  t.set_back(out, [&t, ov = v.id, o = out.id]() {
    t.accum(ov, t.grad_of(o).rowwise().sum());
  });
  return out;
}

template <class S>
Var<S> transpose(Var<S> a) {
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().transpose());
  t.set_back(out, [&t, oa = a.id, o = out.id]() {
    t.accum(oa, t.grad_of(o).transpose());
  });
  return out;
}

// ---- structural ops ----

template <class S>
Var<S> reshape(Var<S> a, int rows, int cols) {
  if (rows * cols != a.rows() * a.cols()) throw ShapeError("reshape: size mismatch");
  Tape<S>& t = *a.tape;
  // Row-major reinterpretation, matching the row-major image layout used by
  // the conv ops.
  using RM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RM rm = a.val();
  Eigen::Map<RM> view(rm.data(), rows, cols);
  Var<S> out = t.make(Mat<S>(view));
  t.set_back(out, [&t, oa = a.id, o = out.id, rows, cols]() {
    RM g = t.grad_of(o);
    Eigen::Map<RM> back(g.data(), t.val(oa).rows(), t.val(oa).cols());
    t.accum(oa, Mat<S>(back));
  });
  return out;
}

// Contiguous row slice [r0, r0+n).
template <class S>
Var<S> rows(Var<S> a, int r0, int n) {
  if (r0 < 0 || n < 1 || r0 + n > a.rows()) throw ShapeError("rows: slice out of range");
  Tape<S>& t = *a.tape;
  Var<S> out = t.make(a.val().middleRows(r0, n));
  t.set_back(out, [&t, oa = a.id, o = out.id, r0, n]() {
    const Mat<S>& va = t.val(oa);
    Mat<S> g = Mat<S>::Zero(va.rows(), va.cols());
    g.middleRows(r0, n) = t.grad_of(o);
    t.accum(oa, g);
  });
  return out;
}

template <class S>
Var<S> vstack(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("vstack: no operands");
  Tape<S>& t = *parts[0].tape;
  int cols = parts[0].cols();
  int rows_total = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: column mismatch");
    rows_total += p.rows();
  }
  Mat<S> m(rows_total, cols);
  int r = 0;
  std::vector<std::pair<int, int>> spans;  // (id, rows)
  for (const auto& p : parts) {
    m.middleRows(r, p.rows()) = p.val();
    spans.emplace_back(p.id, p.rows());
    r += p.rows();
  }
  Var<S> out = t.make(std::move(m));
  t.set_back(out, [&t, spans, o = out.id]() {
    int r0 = 0;
    for (auto [id, nr] : spans) {
      t.accum(id, t.grad_of(o).middleRows(r0, nr));
      r0 += nr;
    }
  });
  return out;
}

template <class S>
Var<S> hstack(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("hstack: no operands");
  Tape<S>& t = *parts[0].tape;
  int rows_n = parts[0].rows();
  int cols_total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows_n) throw ShapeError("hstack: row mismatch");
    cols_total += p.cols();
  }
  Mat<S> m(rows_n, cols_total);
  int c = 0;
  std::vector<std::pair<int, int>> spans;
  for (const auto& p : parts) {
    m.middleCols(c, p.cols()) = p.val();
    spans.emplace_back(p.id, p.cols());
    c += p.cols();
  }
  Var<S> out = t.make(std::move(m));
  t.set_back(out, [&t, spans, o = out.id]() {
    int c0 = 0;
    for (auto [id, nc] : spans) {
      t.accum(id, t.grad_of(o).middleCols(c0, nc));
      c0 += nc;
    }
  });
  return out;
}

// ---- composed helpers (no new node kinds) ----

// Concatenate column vectors vertically.
template <class S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  return vstack(parts);
}

// Softmax over a column vector, shifted by the (constant) max for stability.
template <class S>
Var<S> softmax_col(Var<S> logits) {
  if (logits.cols() != 1) throw ShapeError("softmax_col: operand must be a column");
  Tape<S>& t = *logits.tape;
  S shift = logits.val().maxCoeff();
  Var<S> e = exp(logits + static_cast<double>(-shift));
  Var<S> z = sum(e);
  return smul(reciprocal(z), e);
}

}  // namespace capvid::ad
