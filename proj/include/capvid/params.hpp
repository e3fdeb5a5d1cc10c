#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "capvid/rng.hpp"
#include "capvid/tape.hpp"

namespace capvid {

// Named parameter arrays with gradients and Adam moments.
template <class S>
class ParamStore {
 public:
  using M = ad::Mat<S>;

  struct Entry {
    std::string name;
    M value;
    M grad;
    M adam_m;
    M adam_v;
  };

  int add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    Entry e;
    e.name = name;
    e.value = M::Zero(rows, cols);
    e.grad = M::Zero(rows, cols);
    e.adam_m = M::Zero(rows, cols);
    e.adam_v = M::Zero(rows, cols);
    entries_.push_back(std::move(e));
    index_[name] = static_cast<int>(entries_.size()) - 1;
    return index_[name];
  }

  int add_uniform(const std::string& name, int rows, int cols, double limit, Rng& rng) {
    int id = add(name, rows, cols);
    M& v = entries_[id].value;
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      for (Eigen::Index i = 0; i < v.rows(); ++i)
        v(i, j) = static_cast<S>(rng.uniform(-limit, limit));
    return id;
  }

  // Glorot/Xavier uniform with explicit fan counts.
  int add_xavier(const std::string& name, int rows, int cols, int fan_in, int fan_out,
                 Rng& rng) {
    return add_uniform(name, rows, cols, std::sqrt(6.0 / (fan_in + fan_out)), rng);
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  Entry& entry(int id) { return entries_[id]; }
  const Entry& entry(int id) const { return entries_[id]; }
  Entry& entry(const std::string& name) { return entries_[id_of(name)]; }
  size_t count() const { return entries_.size(); }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  // Introduces the parameter onto a tape; backward accumulates into grad.
  ad::Var<S> use(ad::Tape<S>& tape, int id) {
    return tape.leaf(entries_[id].value, &entries_[id].grad);
  }
  ad::Var<S> use(ad::Tape<S>& tape, const std::string& name) { return use(tape, id_of(name)); }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  double grad_norm() const {
    double sq = 0;
    for (const auto& e : entries_) sq += static_cast<double>(e.grad.squaredNorm());
    return std::sqrt(sq);
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// First-order adaptive optimizer (Adam) with global gradient-norm clipping.
template <class S>
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double clip, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), clip_(clip), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update from the accumulated gradients, returns the pre-clip
  // gradient norm.
  double step(ParamStore<S>& params) {
    ++t_;
    double norm = params.grad_norm();
    double scale = 1.0;
    if (clip_ > 0 && norm > clip_) scale = clip_ / norm;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& e : params.entries()) {
      auto g = (e.grad * static_cast<S>(scale)).eval();
      e.adam_m = static_cast<S>(beta1_) * e.adam_m + static_cast<S>(1.0 - beta1_) * g;
      e.adam_v = static_cast<S>(beta2_) * e.adam_v +
                 static_cast<S>(1.0 - beta2_) * g.cwiseProduct(g).eval();
      auto mhat = e.adam_m / static_cast<S>(bc1);
      auto vhat = e.adam_v / static_cast<S>(bc2);
      e.value -=
          (static_cast<S>(lr_) * mhat.array() / (vhat.array().sqrt() + static_cast<S>(eps_)))
              .matrix();
    }
    return norm;
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  double lr_, clip_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace capvid
