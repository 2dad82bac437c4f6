#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace diffdet::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat val;
  Mat grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::function<void()> backprop;  // set only when requires_grad and the tape records
};

/// Append-only computation tape. Creation order is a topological order, so the
/// backward sweep just walks the node list in reverse. One tape per forward
/// pass; gradients land in the Param objects referenced by leaf().
class Tape {
public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Node* make(Mat v) {
    nodes_.emplace_back();
    nodes_.back().val = std::move(v);
    return &nodes_.back();
  }

  /// Seeds d(root)/d(root) = seed (root must be 1x1) and runs the reverse sweep.
  void backward(Node* root, double seed = 1.0) {
    if (root->val.rows() != 1 || root->val.cols() != 1)
      throw std::invalid_argument("backward: root must be a scalar node");
    if (root->grad.size() == 0) root->grad = Mat::Zero(1, 1);
    root->grad(0, 0) += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->backprop && it->grad.size() != 0) it->backprop();
    }
  }

  std::size_t size() const { return nodes_.size(); }

private:
  bool grad_enabled_;
  std::deque<Node> nodes_;  // deque: stable addresses
};

class Var {
public:
  Var() = default;
  Var(Tape* tape, Node* node) : tape_(tape), node_(node) {}

  const Mat& val() const { return node_->val; }
  Eigen::Index rows() const { return node_->val.rows(); }
  Eigen::Index cols() const { return node_->val.cols(); }
  Tape* tape() const { return tape_; }
  Node* node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

private:
  Tape* tape_ = nullptr;
  Node* node_ = nullptr;
};

inline void accumulate(Node* n, const Mat& g) {
  if (!n->requires_grad) return;
  if (n->grad.size() == 0)
    n->grad = g;
  else
    n->grad += g;
}

inline Var constant(Tape& t, Mat v) { return Var(&t, t.make(std::move(v))); }

inline Var constant_scalar(Tape& t, double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return constant(t, m);
}

inline double scalar(const Var& v) { return v.val()(0, 0); }

namespace detail {
inline bool rec(const Var& a) { return a.tape()->grad_enabled() && a.node()->requires_grad; }
inline void mark(Node* out, std::initializer_list<const Var*> ins) {
  for (const Var* v : ins)
    if ((*v).node()->requires_grad) {
      out->requires_grad = true;
      return;
    }
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Core arithmetic
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Tape* t = a.tape();
  Node* out = t->make(a.val() * b.val());
  if (t->grad_enabled()) {
    detail::mark(out, {&a, &b});
    if (out->requires_grad) {
      Node *an = a.node(), *bn = b.node();
      out->backprop = [an, bn, out] {
        accumulate(an, out->grad * bn->val.transpose());
        accumulate(bn, an->val.transpose() * out->grad);
      };
    }
  }
  return Var(t, out);
}

inline Var transpose(Var a) {
  Tape* t = a.tape();
  Node* out = t->make(a.val().transpose());
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      out->backprop = [an, out] { accumulate(an, out->grad.transpose()); };
    }
  }
  return Var(t, out);
}

inline Var add(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("add: shape mismatch");
  Tape* t = a.tape();
  Node* out = t->make(a.val() + b.val());
  if (t->grad_enabled()) {
    detail::mark(out, {&a, &b});
    if (out->requires_grad) {
      Node *an = a.node(), *bn = b.node();
      out->backprop = [an, bn, out] {
        accumulate(an, out->grad);
        accumulate(bn, out->grad);
      };
    }
  }
  return Var(t, out);
}

inline Var sub(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("sub: shape mismatch");
  Tape* t = a.tape();
  Node* out = t->make(a.val() - b.val());
  if (t->grad_enabled()) {
    detail::mark(out, {&a, &b});
    if (out->requires_grad) {
      Node *an = a.node(), *bn = b.node();
      out->backprop = [an, bn, out] {
        accumulate(an, out->grad);
        accumulate(bn, -out->grad);
      };
    }
  }
  return Var(t, out);
}

/// a + row vector v broadcast over all rows of a.
inline Var add_rowvec(Var a, Var v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: v must be 1 x cols(a)");
  Tape* t = a.tape();
  Node* out = t->make(a.val().rowwise() + v.val().row(0));
  if (t->grad_enabled()) {
    detail::mark(out, {&a, &v});
    if (out->requires_grad) {
      Node *an = a.node(), *vn = v.node();
      out->backprop = [an, vn, out] {
        accumulate(an, out->grad);
        accumulate(vn, out->grad.colwise().sum());
      };
    }
  }
  return Var(t, out);
}

inline Var scale(Var a, double s) {
  Tape* t = a.tape();
  Node* out = t->make(a.val() * s);
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      out->backprop = [an, out, s] { accumulate(an, out->grad * s); };
    }
  }
  return Var(t, out);
}

inline Var add_scalar(Var a, double s) {
  Tape* t = a.tape();
  Node* out = t->make(a.val().array() + s);
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      out->backprop = [an, out] { accumulate(an, out->grad); };
    }
  }
  return Var(t, out);
}

inline Var cwise_mul(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("cwise_mul: shape mismatch");
  Tape* t = a.tape();
  Node* out = t->make(a.val().cwiseProduct(b.val()));
  if (t->grad_enabled()) {
    detail::mark(out, {&a, &b});
    if (out->requires_grad) {
      Node *an = a.node(), *bn = b.node();
      out->backprop = [an, bn, out] {
        accumulate(an, out->grad.cwiseProduct(bn->val));
        accumulate(bn, out->grad.cwiseProduct(an->val));
      };
    }
  }
  return Var(t, out);
}

inline Var cwise_div(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("cwise_div: shape mismatch");
  Tape* t = a.tape();
  Node* out = t->make(a.val().cwiseQuotient(b.val()));
  if (t->grad_enabled()) {
    detail::mark(out, {&a, &b});
    if (out->requires_grad) {
      Node *an = a.node(), *bn = b.node();
      out->backprop = [an, bn, out] {
        accumulate(an, out->grad.cwiseQuotient(bn->val));
        accumulate(bn, -out->grad.cwiseProduct(an->val)
                            .cwiseQuotient(bn->val.cwiseProduct(bn->val)));
      };
    }
  }
  return Var(t, out);
}

/// Elementwise multiply by a constant matrix (same shape).
inline Var cwise_mul_const(Var a, const Mat& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols())
    throw std::invalid_argument("cwise_mul_const: shape mismatch");
  Tape* t = a.tape();
  Node* out = t->make(a.val().cwiseProduct(c));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Mat cc = c;
      out->backprop = [an, out, cc = std::move(cc)] {
        accumulate(an, out->grad.cwiseProduct(cc));
      };
    }
  }
  return Var(t, out);
}

inline Var cwise_max_const(Var a, const Mat& c) {
  Tape* t = a.tape();
  Node* out = t->make(a.val().cwiseMax(c));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Mat mask = (a.val().array() >= c.array()).cast<double>();
      out->backprop = [an, out, mask = std::move(mask)] {
        accumulate(an, out->grad.cwiseProduct(mask));
      };
    }
  }
  return Var(t, out);
}

inline Var cwise_min_const(Var a, const Mat& c) {
  Tape* t = a.tape();
  Node* out = t->make(a.val().cwiseMin(c));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Mat mask = (a.val().array() <= c.array()).cast<double>();
      out->backprop = [an, out, mask = std::move(mask)] {
        accumulate(an, out->grad.cwiseProduct(mask));
      };
    }
  }
  return Var(t, out);
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

inline Var relu(Var a) {
  Tape* t = a.tape();
  Node* out = t->make(a.val().cwiseMax(0.0));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Mat mask = (a.val().array() > 0.0).cast<double>();
      out->backprop = [an, out, mask = std::move(mask)] {
        accumulate(an, out->grad.cwiseProduct(mask));
      };
    }
  }
  return Var(t, out);
}

inline Var tanh_act(Var a) {
  Tape* t = a.tape();
  Node* out = t->make(a.val().array().tanh());
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      out->backprop = [an, out] {
        accumulate(an, out->grad.cwiseProduct(
                           (1.0 - out->val.array().square()).matrix()));
      };
    }
  }
  return Var(t, out);
}

inline Var sigmoid(Var a) {
  Tape* t = a.tape();
  Node* out = t->make((1.0 / (1.0 + (-a.val().array()).exp())).matrix());
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      out->backprop = [an, out] {
        accumulate(an, out->grad.cwiseProduct(
                           (out->val.array() * (1.0 - out->val.array())).matrix()));
      };
    }
  }
  return Var(t, out);
}

/// softplus(x) = log(1 + e^x), computed stably.
inline Var softplus(Var a) {
  Tape* t = a.tape();
  Mat v = a.val().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Mat sig = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
      out->backprop = [an, out, sig = std::move(sig)] {
        accumulate(an, out->grad.cwiseProduct(sig));
      };
    }
  }
  return Var(t, out);
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Var slice_cols(Var a, Eigen::Index j0, Eigen::Index n) {
  if (j0 < 0 || j0 + n > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  Tape* t = a.tape();
  Node* out = t->make(a.val().middleCols(j0, n));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Eigen::Index rows = a.rows(), cols = a.cols();
      out->backprop = [an, out, j0, n, rows, cols] {
        Mat g = Mat::Zero(rows, cols);
        g.middleCols(j0, n) = out->grad;
        accumulate(an, g);
      };
    }
  }
  return Var(t, out);
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Tape* t = parts[0].tape();
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  Eigen::Index j = 0;
  for (const Var& p : parts) {
    v.middleCols(j, p.cols()) = p.val();
    j += p.cols();
  }
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    bool any = false;
    for (const Var& p : parts) any = any || p.node()->requires_grad;
    out->requires_grad = any;
    if (any) {
      std::vector<std::pair<Node*, Eigen::Index>> spans;
      Eigen::Index jj = 0;
      for (const Var& p : parts) {
        spans.emplace_back(p.node(), jj);
        jj += p.cols();
      }
      out->backprop = [spans = std::move(spans), out] {
        for (std::size_t i = 0; i < spans.size(); ++i) {
          Eigen::Index w = (i + 1 < spans.size() ? spans[i + 1].second : out->grad.cols()) -
                           spans[i].second;
          accumulate(spans[i].first, out->grad.middleCols(spans[i].second, w));
        }
      };
    }
  }
  return Var(t, out);
}

inline Var gather_rows(Var a, std::vector<Eigen::Index> idx) {
  Tape* t = a.tape();
  Mat v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.val().row(idx[i]);
  }
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Eigen::Index rows = a.rows(), cols = a.cols();
      out->backprop = [an, out, idx = std::move(idx), rows, cols] {
        Mat g = Mat::Zero(rows, cols);
        for (std::size_t i = 0; i < idx.size(); ++i)
          g.row(idx[i]) += out->grad.row(static_cast<Eigen::Index>(i));
        accumulate(an, g);
      };
    }
  }
  return Var(t, out);
}

/// Row-major reshape (element (i, j) of a at flat index i*cols(a)+j).
inline Var reshape_rowmajor(Var a, Eigen::Index r, Eigen::Index c) {
  if (r * c != a.rows() * a.cols()) throw std::invalid_argument("reshape: size mismatch");
  Tape* t = a.tape();
  Mat v(r, c);
  Eigen::Index ac = a.cols();
  for (Eigen::Index k = 0; k < r * c; ++k) v(k / c, k % c) = a.val()(k / ac, k % ac);
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Eigen::Index ar = a.rows();
      out->backprop = [an, out, ar, ac, c] {
        Mat g(ar, ac);
        for (Eigen::Index k = 0; k < ar * ac; ++k) g(k / ac, k % ac) = out->grad(k / c, k % c);
        accumulate(an, g);
      };
    }
  }
  return Var(t, out);
}

/// Max over each contiguous block of group_size rows, per column.
/// Input rows must be n_groups * group_size.
inline Var group_maxpool(Var a, Eigen::Index group_size) {
  if (group_size < 1 || a.rows() % group_size != 0)
    throw std::invalid_argument("group_maxpool: rows not divisible by group size");
  Tape* t = a.tape();
  Eigen::Index g = a.rows() / group_size, c = a.cols();
  Mat v(g, c);
  Eigen::MatrixXi arg(g, c);
  for (Eigen::Index i = 0; i < g; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      Eigen::Index best = i * group_size;
      double bv = a.val()(best, j);
      for (Eigen::Index k = 1; k < group_size; ++k) {
        double x = a.val()(i * group_size + k, j);
        if (x > bv) {
          bv = x;
          best = i * group_size + k;
        }
      }
      v(i, j) = bv;
      arg(i, j) = static_cast<int>(best);
    }
  }
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Eigen::Index rows = a.rows();
      out->backprop = [an, out, arg = std::move(arg), rows, c] {
        Mat gr = Mat::Zero(rows, c);
        for (Eigen::Index i = 0; i < out->grad.rows(); ++i)
          for (Eigen::Index j = 0; j < c; ++j) gr(arg(i, j), j) += out->grad(i, j);
        accumulate(an, gr);
      };
    }
  }
  return Var(t, out);
}

// ---------------------------------------------------------------------------
// Rows: softmax / layernorm
// ---------------------------------------------------------------------------

inline Var softmax_rows(Var a) {
  Tape* t = a.tape();
  Mat v = a.val();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      out->backprop = [an, out] {
        Mat g(out->val.rows(), out->val.cols());
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          double dot = out->grad.row(i).dot(out->val.row(i));
          g.row(i) = out->val.row(i).cwiseProduct(out->grad.row(i).array().matrix()) -
                     dot * out->val.row(i);
        }
        accumulate(an, g);
      };
    }
  }
  return Var(t, out);
}

/// Per-row layer normalization with affine parameters gamma, beta (1 x C).
inline Var layernorm_rows(Var x, Var gamma, Var beta, double eps = 1e-5) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    throw std::invalid_argument("layernorm_rows: gamma/beta must be 1 x cols(x)");
  Tape* t = x.tape();
  Eigen::Index n = x.rows(), c = x.cols();
  Mat xhat(n, c);
  Eigen::VectorXd inv_sigma(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mu = x.val().row(i).mean();
    double var = (x.val().row(i).array() - mu).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(i) = is;
    xhat.row(i) = (x.val().row(i).array() - mu) * is;
  }
  Mat v = (xhat.array().rowwise() * gamma.val().row(0).array()).rowwise() +
          beta.val().row(0).array();
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&x, &gamma, &beta});
    if (out->requires_grad) {
      Node *xn = x.node(), *gn = gamma.node(), *bn = beta.node();
      out->backprop = [xn, gn, bn, out, xhat = std::move(xhat),
                       inv_sigma = std::move(inv_sigma)] {
        const Mat& dy = out->grad;
        accumulate(gn, (dy.cwiseProduct(xhat)).colwise().sum());
        accumulate(bn, dy.colwise().sum());
        if (xn->requires_grad) {
          Mat dxhat = dy.array().rowwise() * gn->val.row(0).array();
          Mat dx(dy.rows(), dy.cols());
          double c = static_cast<double>(dy.cols());
          for (Eigen::Index i = 0; i < dy.rows(); ++i) {
            double m1 = dxhat.row(i).sum() / c;
            double m2 = dxhat.row(i).dot(xhat.row(i)) / c;
            dx.row(i) = inv_sigma(i) *
                        (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
          }
          accumulate(xn, dx);
        }
      };
    }
  }
  return Var(t, out);
}

// ---------------------------------------------------------------------------
// Interpolation
// ---------------------------------------------------------------------------

/// out.row(i) = sum_j weights[i][j] * grid.row(indices[i][j]); the geometric
/// stencil (8 cell corners) is precomputed by the caller.
inline Var weighted_gather_rows(Var grid,
                                std::vector<std::array<Eigen::Index, 8>> indices,
                                std::vector<std::array<double, 8>> weights) {
  if (indices.size() != weights.size())
    throw std::invalid_argument("weighted_gather_rows: stencil size mismatch");
  Tape* t = grid.tape();
  Eigen::Index n = static_cast<Eigen::Index>(indices.size()), c = grid.cols();
  Mat v = Mat::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < 8; ++j) v.row(i) += weights[i][j] * grid.val().row(indices[i][j]);
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&grid});
    if (out->requires_grad) {
      Node* gn = grid.node();
      Eigen::Index rows = grid.rows();
      out->backprop = [gn, out, indices = std::move(indices), weights = std::move(weights),
                       rows, c] {
        Mat g = Mat::Zero(rows, c);
        for (std::size_t i = 0; i < indices.size(); ++i)
          for (int j = 0; j < 8; ++j)
            g.row(indices[i][j]) +=
                weights[i][j] * out->grad.row(static_cast<Eigen::Index>(i));
        accumulate(gn, g);
      };
    }
  }
  return Var(t, out);
}

// ---------------------------------------------------------------------------
// Reductions and losses (all produce 1x1 nodes)
// ---------------------------------------------------------------------------

inline Var reduce_sum(Var a) {
  Tape* t = a.tape();
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&a});
    if (out->requires_grad) {
      Node* an = a.node();
      Eigen::Index r = a.rows(), c = a.cols();
      out->backprop = [an, out, r, c] {
        accumulate(an, Mat::Constant(r, c, out->grad(0, 0)));
      };
    }
  }
  return Var(t, out);
}

inline Var reduce_mean(Var a) { return scale(reduce_sum(a), 1.0 / static_cast<double>(a.rows() * a.cols())); }

/// Weighted Huber loss sum_ij w_ij * huber_delta(pred_ij - target_ij).
inline Var huber_sum(Var pred, const Mat& target, double delta, const Mat& weight) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      pred.rows() != weight.rows() || pred.cols() != weight.cols())
    throw std::invalid_argument("huber_sum: shape mismatch");
  Tape* t = pred.tape();
  Mat e = pred.val() - target;
  double total = 0.0;
  for (Eigen::Index i = 0; i < e.rows(); ++i)
    for (Eigen::Index j = 0; j < e.cols(); ++j) {
      double a = std::abs(e(i, j));
      total += weight(i, j) * (a <= delta ? 0.5 * a * a : delta * (a - 0.5 * delta));
    }
  Mat v(1, 1);
  v(0, 0) = total;
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&pred});
    if (out->requires_grad) {
      Node* pn = pred.node();
      Mat de = e.cwiseMax(-delta).cwiseMin(delta).cwiseProduct(weight);
      out->backprop = [pn, out, de = std::move(de)] {
        accumulate(pn, out->grad(0, 0) * de);
      };
    }
  }
  return Var(t, out);
}

/// Softmax cross-entropy per row against one-hot targets, weighted per row.
inline Var softmax_xent_sum(Var logits, const Mat& onehot, const Eigen::VectorXd& row_w) {
  if (logits.rows() != onehot.rows() || logits.cols() != onehot.cols() ||
      row_w.size() != logits.rows())
    throw std::invalid_argument("softmax_xent_sum: shape mismatch");
  Tape* t = logits.tape();
  Eigen::Index n = logits.rows();
  Mat sm = logits.val();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = sm.row(i).maxCoeff();
    double lse = std::log((sm.row(i).array() - m).exp().sum()) + m;
    total += row_w(i) * (lse - sm.row(i).dot(onehot.row(i)));
    sm.row(i) = ((sm.row(i).array() - m).exp() / (sm.row(i).array() - m).exp().sum()).matrix();
  }
  Mat v(1, 1);
  v(0, 0) = total;
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&logits});
    if (out->requires_grad) {
      Node* ln = logits.node();
      Mat d = (sm - onehot).array().colwise() * row_w.array();
      out->backprop = [ln, out, d = std::move(d)] { accumulate(ln, out->grad(0, 0) * d); };
    }
  }
  return Var(t, out);
}

/// Binary cross-entropy on logits, weighted elementwise, summed.
inline Var bce_logits_sum(Var logits, const Mat& targets, const Mat& weight) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols() ||
      logits.rows() != weight.rows() || logits.cols() != weight.cols())
    throw std::invalid_argument("bce_logits_sum: shape mismatch");
  Tape* t = logits.tape();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      double x = logits.val()(i, j), y = targets(i, j);
      total += weight(i, j) * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
    }
  Mat v(1, 1);
  v(0, 0) = total;
  Node* out = t->make(std::move(v));
  if (t->grad_enabled()) {
    detail::mark(out, {&logits});
    if (out->requires_grad) {
      Node* ln = logits.node();
      Mat sig = (1.0 / (1.0 + (-logits.val().array()).exp())).matrix();
      Mat d = (sig - targets).cwiseProduct(weight);
      out->backprop = [ln, out, d = std::move(d)] { accumulate(ln, out->grad(0, 0) * d); };
    }
  }
  return Var(t, out);
}

}  // namespace diffdet::ad
