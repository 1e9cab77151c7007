#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sgformer/graph.hpp"
#include "sgformer/rng.hpp"
#include "sgformer/types.hpp"

namespace sgf {

inline constexpr double kDegeneracyEps = 1e-12;

/// Reverse-mode tape over dense matrices. Operations append nodes; parents
/// always precede children, so the reverse pass is a plain reverse sweep.
/// Intermediate values and gradients are released as soon as the sweep has
/// consumed them, keeping peak memory close to the forward footprint. The
/// tape also accounts every matrix it allocates (live/peak bytes), which the
/// benchmark uses for analytic memory measurements.
template <class S>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() { release_bytes(live_bytes_); }

  /// Non-differentiable input.
  Var input(Mat<S> value) { return push(std::move(value), /*requires_grad=*/false, /*keep=*/true); }

  /// Differentiable leaf; the tape stores a copy.
  Var param(const Mat<S>& value) { return push(value, /*requires_grad=*/true, /*keep=*/true); }

  const Mat<S>& value(Var v) const { return node(v).value; }

  /// Gradient of the last backward() target w.r.t. a leaf. Throws if the
  /// leaf was never reached (parameter not on the loss graph).
  const Mat<S>& grad(Var v) const {
    const NodeRec& n = node(v);
    if (n.grad.size() == 0)
      throw GraphError("tape: parameter unreachable from loss (no gradient accumulated)");
    return n.grad;
  }

  Index rows(Var v) const { return node(v).value.rows(); }
  Index cols(Var v) const { return node(v).value.cols(); }

  // -- elementwise / affine ---------------------------------------------------

  Var add(Var a, Var b) { return lincomb(S(1), a, S(1), b); }

  /// sa*A + sb*B
  Var lincomb(S sa, Var a, S sb, Var b) {
    check_same_shape(a, b, "lincomb");
    Var out = push(sa * node(a).value + sb * node(b).value, needs(a, b), false);
    node(out).back = [a, b, sa, sb](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.accumulate(a, sa * g);
      t.accumulate(b, sb * g);
    };
    return out;
  }

  Var scale(Var a, S s) { return affine(a, s, S(0)); }

  /// s*A + c (elementwise)
  Var affine(Var a, S s, S c) {
    Var out = push((s * node(a).value.array() + c).matrix(), needs(a), false);
    node(out).back = [a, s](Tape& t, int self) { t.accumulate(a, s * t.nodes_[self].grad); };
    return out;
  }

  Var hadamard(Var a, Var b) {
    check_same_shape(a, b, "hadamard");
    Var out = push(node(a).value.cwiseProduct(node(b).value), needs(a, b), false);
    node(out).back = [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.accumulate(a, g.cwiseProduct(t.nodes_[b.id].value));
      t.accumulate(b, g.cwiseProduct(t.nodes_[a.id].value));
    };
    return out;
  }

  Var relu(Var a) {
    Var out = push(node(a).value.cwiseMax(S(0)), needs(a), false);
    node(out).back = [a](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      const Mat<S>& x = t.nodes_[a.id].value;
      t.accumulate(a, (x.array() > S(0)).template cast<S>().matrix().cwiseProduct(g));
    };
    return out;
  }

  /// Inverted dropout; the survivor mask (already scaled by 1/(1-rate)) is
  /// saved for the backward pass. rate == 0 or inference passes through
  /// without consuming randomness.
  Var dropout(Var a, S rate, Rng& rng, bool training) {
    if (rate < S(0) || rate >= S(1)) throw ConfigError("dropout: rate must be in [0, 1)");
    if (!training || rate == S(0)) return a;
    const Mat<S>& x = node(a).value;
    const S keep_scale = S(1) / (S(1) - rate);
    Mat<S> mask(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i)
      for (Index j = 0; j < x.cols(); ++j)
        mask(i, j) = (rng.uniform() >= static_cast<double>(rate)) ? keep_scale : S(0);
    Var out = push(x.cwiseProduct(mask), needs(a), false);
    save(out, std::move(mask));
    node(out).back = [a](Tape& t, int self) {
      t.accumulate(a, t.nodes_[self].grad.cwiseProduct(t.nodes_[self].saved));
    };
    return out;
  }

  // -- products ---------------------------------------------------------------

  Var matmul(Var a, Var b) {
    if (cols(a) != rows(b)) throw ShapeError("matmul: inner dimensions differ");
    Var out = push(node(a).value * node(b).value, needs(a, b), false);
    node(out).back = [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.accumulate(a, g * t.nodes_[b.id].value.transpose());
      t.accumulate(b, t.nodes_[a.id].value.transpose() * g);
    };
    return out;
  }

  /// A^T * B
  Var matmul_tn(Var a, Var b) {
    if (rows(a) != rows(b)) throw ShapeError("matmul_tn: row counts differ");
    Var out = push(node(a).value.transpose() * node(b).value, needs(a, b), false);
    node(out).back = [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.accumulate(a, t.nodes_[b.id].value * g.transpose());
      t.accumulate(b, t.nodes_[a.id].value * g);
    };
    return out;
  }

  /// A * B^T
  Var matmul_nt(Var a, Var b) {
    if (cols(a) != cols(b)) throw ShapeError("matmul_nt: column counts differ");
    Var out = push(node(a).value * node(b).value.transpose(), needs(a, b), false);
    node(out).back = [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.accumulate(a, g * t.nodes_[b.id].value);
      t.accumulate(b, g.transpose() * t.nodes_[a.id].value);
    };
    return out;
  }

  /// Row-broadcast bias add: A + 1*b, with b of shape 1 x cols.
  Var add_row(Var a, Var b) {
    if (rows(b) != 1 || cols(b) != cols(a)) throw ShapeError("add_row: bias must be 1 x cols(a)");
    Var out = push(node(a).value.rowwise() + node(b).value.row(0), needs(a, b), false);
    node(out).back = [a, b](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.accumulate(a, g);
      t.accumulate(b, g.colwise().sum());
    };
    return out;
  }

  /// Sparse-dense product G * A. The graph must be symmetric (our adjacency
  /// invariant); the backward pass reuses it as its own transpose.
  Var spmm(const SparseGraph<S>& g, Var a) {
    Var out = push(sgf::spmm(g, node(a).value), needs(a), false);
    const SparseGraph<S>* gp = &g;
    node(out).back = [a, gp](Tape& t, int self) {
      t.accumulate(a, sgf::spmm(*gp, t.nodes_[self].grad));
    };
    return out;
  }

  // -- reductions / normalizers ----------------------------------------------

  /// A / ||A||_F with 0/0 defined as 0.
  Var frob_normalize(Var a) {
    const Mat<S>& x = node(a).value;
    const S nrm = x.norm();
    if (nrm == S(0)) {
      Var out = push(Mat<S>::Zero(x.rows(), x.cols()), needs(a), false);
      node(out).back = [](Tape&, int) {};
      return out;
    }
    Var out = push(x / nrm, needs(a), false);
    node(out).back = [a, nrm](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      const Mat<S>& y = t.nodes_[self].value;
      const S inner = (g.array() * y.array()).sum();
      t.accumulate(a, (g - inner * y) / nrm);
    };
    return out;
  }

  /// Column sums as a 1 x cols row vector.
  Var colsum(Var a) {
    Var out = push(node(a).value.colwise().sum(), needs(a), false);
    node(out).back = [a](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      t.accumulate(a, g.replicate(t.nodes_[a.id].value.rows(), 1));
    };
    return out;
  }

  /// Divides row u of A by d(u). Fires the degeneracy contract if any
  /// denominator entry is at or below kDegeneracyEps.
  Var rowdiv(Var a, Var d) {
    if (cols(d) != 1 || rows(d) != rows(a)) throw ShapeError("rowdiv: d must be rows(a) x 1");
    const Mat<S>& den = node(d).value;
    for (Index i = 0; i < den.rows(); ++i) {
      if (!(static_cast<double>(den(i, 0)) > kDegeneracyEps))
        throw DegeneracyError("attention normalizer degenerate at row " + std::to_string(i));
    }
    Var out = push((node(a).value.array().colwise() / den.col(0).array()).matrix(), needs(a, d), false);
    node(out).back = [a, d](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      const Mat<S>& den = t.nodes_[d.id].value;
      const Mat<S>& y = t.nodes_[self].value;
      t.accumulate(a, (g.array().colwise() / den.col(0).array()).matrix());
      Mat<S> gd = -((g.array() * y.array()).rowwise().sum() / den.col(0).array()).matrix();
      t.accumulate(d, gd);
    };
    return out;
  }

  Var sum(Var a) {
    Mat<S> s(1, 1);
    s(0, 0) = node(a).value.sum();
    Var out = push(std::move(s), needs(a), false);
    node(out).back = [a](Tape& t, int self) {
      const Mat<S>& x = t.nodes_[a.id].value;
      t.accumulate(a, Mat<S>::Constant(x.rows(), x.cols(), t.nodes_[self].grad(0, 0)));
    };
    return out;
  }

  // -- losses ------------------------------------------------------------------

  /// Mean over masked rows of -log softmax(logits)[label], in log-sum-exp
  /// stable form. Scalar output.
  Var softmax_cross_entropy(Var logits, VecXi labels, Mask mask) {
    const Mat<S>& l = node(logits).value;
    if (labels.size() != l.rows()) throw ShapeError("cross_entropy: labels length != rows");
    if (static_cast<Index>(mask.size()) != l.rows())
      throw ShapeError("cross_entropy: mask length != rows");
    const Index m = mask_count(mask);
    if (m == 0) throw ConfigError("cross_entropy: empty mask");
    double total = 0.0;
    for (Index i = 0; i < l.rows(); ++i) {
      if (!mask[i]) continue;
      if (labels[i] < 0 || labels[i] >= l.cols()) throw ConfigError("cross_entropy: label out of range");
      const S mx = l.row(i).maxCoeff();
      double lse = 0.0;
      for (Index c = 0; c < l.cols(); ++c) lse += std::exp(static_cast<double>(l(i, c) - mx));
      total += std::log(lse) + static_cast<double>(mx) - static_cast<double>(l(i, labels[i]));
    }
    Mat<S> v(1, 1);
    v(0, 0) = static_cast<S>(total / static_cast<double>(m));
    Var out = push(std::move(v), needs(logits), false);
    node(out).back = [logits, labels = std::move(labels), mask = std::move(mask), m](Tape& t, int self) {
      const S gs = t.nodes_[self].grad(0, 0);
      const Mat<S>& l = t.nodes_[logits.id].value;
      Mat<S> g = Mat<S>::Zero(l.rows(), l.cols());
      const S inv_m = S(1) / static_cast<S>(m);
      for (Index i = 0; i < l.rows(); ++i) {
        if (!mask[i]) continue;
        const S mx = l.row(i).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> p = (l.row(i).array() - mx).exp();
        p /= p.sum();
        g.row(i) = (gs * inv_m) * p.matrix();
        g(i, labels[i]) -= gs * inv_m;
      }
      t.accumulate(logits, std::move(g));
    };
    return out;
  }

  /// Mean over masked rows and tasks of stable binary cross-entropy against
  /// 0/1 targets. Scalar output.
  Var bce_multilabel(Var logits, const Mat<S>& targets, Mask mask) {
    const Mat<S>& l = node(logits).value;
    if (targets.rows() != l.rows() || targets.cols() != l.cols())
      throw ShapeError("bce: target shape != logits shape");
    if (static_cast<Index>(mask.size()) != l.rows()) throw ShapeError("bce: mask length != rows");
    const Index m = mask_count(mask);
    if (m == 0) throw ConfigError("bce: empty mask");
    double total = 0.0;
    for (Index i = 0; i < l.rows(); ++i) {
      if (!mask[i]) continue;
      for (Index c = 0; c < l.cols(); ++c) {
        const double x = static_cast<double>(l(i, c));
        const double y = static_cast<double>(targets(i, c));
        total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
      }
    }
    const Index denom = m * l.cols();
    Mat<S> v(1, 1);
    v(0, 0) = static_cast<S>(total / static_cast<double>(denom));
    Var out = push(std::move(v), needs(logits), false);
    const Mat<S>* tgt = &targets;
    node(out).back = [logits, tgt, mask = std::move(mask), denom](Tape& t, int self) {
      const S gs = t.nodes_[self].grad(0, 0);
      const Mat<S>& l = t.nodes_[logits.id].value;
      Mat<S> g = Mat<S>::Zero(l.rows(), l.cols());
      const S inv = gs / static_cast<S>(denom);
      for (Index i = 0; i < l.rows(); ++i) {
        if (!mask[i]) continue;
        for (Index c = 0; c < l.cols(); ++c) {
          const double x = static_cast<double>(l(i, c));
          const double sig = 1.0 / (1.0 + std::exp(-x));
          g(i, c) = inv * static_cast<S>(sig - static_cast<double>((*tgt)(i, c)));
        }
      }
      t.accumulate(logits, std::move(g));
    };
    return out;
  }

  /// Dense softmax attention (the O(N^2) ablation variant):
  /// C = row_softmax(Q K^T / sqrt(d)), out = beta * C * V + (1-beta) * Z0.
  /// Materializes C (kept for backward), so N is guarded.
  Var softmax_attention(Var q, Var k, Var v, Var z0, S beta, Index guard = 20000) {
    const Index n = rows(q);
    if (n > guard) throw SizeError("softmax_attention: N exceeds materialization guard");
    if (rows(k) != n || rows(v) != n || rows(z0) != n)
      throw ShapeError("softmax_attention: row counts differ");
    if (cols(q) != cols(k)) throw ShapeError("softmax_attention: q/k widths differ");
    if (cols(v) != cols(z0)) throw ShapeError("softmax_attention: v/z0 widths differ");
    const S inv_sqrt_d = S(1) / static_cast<S>(std::sqrt(static_cast<double>(cols(q))));
    Mat<S> c = node(q).value * node(k).value.transpose() * inv_sqrt_d;
    for (Index i = 0; i < n; ++i) {
      const S mx = c.row(i).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (c.row(i).array() - mx).exp();
      c.row(i) = (e / e.sum()).matrix();
    }
    Mat<S> out_val = beta * (c * node(v).value) + (S(1) - beta) * node(z0).value;
    Var out = push(std::move(out_val), needs(q, k) || needs(v, z0), false);
    save(out, std::move(c));
    node(out).back = [q, k, v, z0, beta, inv_sqrt_d](Tape& t, int self) {
      const Mat<S>& g = t.nodes_[self].grad;
      const Mat<S>& c = t.nodes_[self].saved;
      t.accumulate(z0, (S(1) - beta) * g);
      t.accumulate(v, beta * (c.transpose() * g));
      // dC = beta * g V^T; softmax backward per row; then into q, k.
      Mat<S> dc = beta * (g * t.nodes_[v.id].value.transpose());
      for (Index i = 0; i < dc.rows(); ++i) {
        const S dot = dc.row(i).dot(c.row(i));
        dc.row(i) = (dc.row(i).array() - dot).matrix().cwiseProduct(c.row(i));
      }
      t.accumulate(q, inv_sqrt_d * (dc * t.nodes_[k.id].value));
      t.accumulate(k, inv_sqrt_d * (dc.transpose() * t.nodes_[q.id].value));
    };
    return out;
  }

  // -- reverse sweep ------------------------------------------------------------

  /// Reverse sweep from a scalar node. Non-kept values/gradients are freed as
  /// soon as the sweep passes them.
  void backward(Var loss) {
    NodeRec& l = node(loss);
    if (l.value.rows() != 1 || l.value.cols() != 1) throw ShapeError("backward: loss must be 1x1");
    alloc_grad(loss.id);
    l.grad(0, 0) = S(1);
    for (int i = loss.id; i >= 0; --i) {
      NodeRec& n = nodes_[i];
      if (n.requires_grad && n.grad.size() != 0 && n.back) n.back(*this, i);
      if (!n.keep) {
        release_bytes(bytes_of(n.value) + bytes_of(n.grad) + bytes_of(n.saved));
        n.value.resize(0, 0);
        n.grad.resize(0, 0);
        n.saved.resize(0, 0);
        n.back = nullptr;
      }
    }
  }

  /// backward() + gradient collection; throws GraphError for parameters the
  /// loss never reached.
  std::vector<Mat<S>> gradients(Var loss, const std::vector<Var>& params) {
    backward(loss);
    std::vector<Mat<S>> out;
    out.reserve(params.size());
    for (Var p : params) out.push_back(grad(p));
    return out;
  }

  std::size_t live_bytes() const { return live_bytes_; }
  std::size_t peak_bytes() const { return peak_bytes_; }

 private:
  struct NodeRec {
    Mat<S> value;
    Mat<S> grad;
    Mat<S> saved;
    bool requires_grad = false;
    bool keep = false;
    std::function<void(Tape&, int)> back;
  };

  static std::size_t bytes_of(const Mat<S>& m) { return sizeof(S) * static_cast<std::size_t>(m.size()); }

  NodeRec& node(Var v) { return nodes_.at(v.id); }
  const NodeRec& node(Var v) const { return nodes_.at(v.id); }

  bool needs(Var a) const { return node(a).requires_grad; }
  bool needs(Var a, Var b) const { return node(a).requires_grad || node(b).requires_grad; }

  void check_same_shape(Var a, Var b, const char* op) const {
    if (rows(a) != rows(b) || cols(a) != cols(b))
      throw ShapeError(std::string(op) + ": operand shapes differ");
  }

  Var push(Mat<S> value, bool requires_grad, bool keep) {
    account_bytes(bytes_of(value));
    NodeRec n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.keep = keep;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void save(Var v, Mat<S> m) {
    account_bytes(bytes_of(m));
    node(v).saved = std::move(m);
  }

  void alloc_grad(int id) {
    NodeRec& n = nodes_[id];
    if (n.grad.size() == 0) {
      account_bytes(bytes_of(n.value));
      n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    }
  }

  template <class Expr>
  void accumulate(Var v, Expr&& delta) {
    NodeRec& n = node(v);
    if (!n.requires_grad) return;
    alloc_grad(v.id);
    n.grad += delta;
  }

  void account_bytes(std::size_t b) {
    live_bytes_ += b;
    if (live_bytes_ > peak_bytes_) peak_bytes_ = live_bytes_;
  }
  void release_bytes(std::size_t b) { live_bytes_ -= std::min(b, live_bytes_); }

  std::vector<NodeRec> nodes_;
  std::size_t live_bytes_ = 0;
  std::size_t peak_bytes_ = 0;
};

}  // namespace sgf
