#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffdet/autodiff.hpp"
#include "diffdet/rng.hpp"

namespace diffdet::ad {

/// A persistent trainable matrix. Gradients accumulate across tapes until the
/// optimizer consumes them; m/v are Adam moments.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;
  Mat v;
};

/// Ordered, named parameter collection. Order is creation order and defines
/// the serialization layout; two stores are structurally isomorphic iff their
/// (name, shape) sequences match.
class ParamStore {
public:
  Param& add(const std::string& name, Mat init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate param: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Mat::Zero(init.rows(), init.cols());
    p->m = Mat::Zero(init.rows(), init.cols());
    p->v = Mat::Zero(init.rows(), init.cols());
    p->value = std::move(init);
    index_[name] = p.get();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
    return *it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown param: " + name);
    return *it->second;
  }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  /// Deep copy (values, grads and moments).
  ParamStore clone() const {
    ParamStore out;
    for (const auto& p : params_) {
      Param& q = out.add(p->name, p->value);
      q.grad = p->grad;
      q.m = p->m;
      q.v = p->v;
    }
    return out;
  }

  bool same_structure(const ParamStore& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      const Param& a = *params_[i];
      const Param& b = *other.params_[i];
      if (a.name != b.name || a.value.rows() != b.value.rows() ||
          a.value.cols() != b.value.cols())
        return false;
    }
    return true;
  }

private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, Param*> index_;
};

/// Graph leaf bound to a persistent parameter; backward adds into p.grad.
inline Var leaf(Tape& t, Param& p) {
  Node* n = t.make(p.value);
  if (t.grad_enabled()) {
    n->requires_grad = true;
    Param* pp = &p;
    n->backprop = [n, pp] { pp->grad += n->grad; };
  }
  return Var(&t, n);
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

inline Mat xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-lim, lim);
  return m;
}

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, std);
  return m;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm cap; <= 0 disables
};

/// One Adam update over all parameters; consumes and clears gradients.
/// step_index is 1-based.
inline void adam_step(ParamStore& ps, const AdamConfig& cfg, long long step_index) {
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) sq += ps[i].grad.squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) {
      double s = cfg.clip_norm / norm;
      for (std::size_t i = 0; i < ps.size(); ++i) ps[i].grad *= s;
    }
  }
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_index));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_index));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Param& p = ps[i];
    p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * p.grad;
    p.v = cfg.beta2 * p.v.array().matrix() +
          (1.0 - cfg.beta2) * p.grad.cwiseProduct(p.grad);
    Mat mhat = p.m / bc1;
    Mat vhat = p.v / bc2;
    p.value -= cfg.lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg.eps).matrix());
    p.grad.setZero();
  }
}

}  // namespace diffdet::ad
