#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sgformer/dense.hpp"
#include "sgformer/tape.hpp"
#include "sgformer/types.hpp"

namespace sgf {

inline constexpr Index kDenseAttentionGuard = 20000;

/// Single-head attention weights: Q/K/V maps are bare d x d linear layers,
/// beta weighs the all-pair propagation against the self-loop residual.
template <class S>
struct AttentionParams {
  Mat<S> w_q, w_k, w_v;  // d x d
  S beta = S(0.5);

  static AttentionParams glorot(Index d, S beta, Rng& rng) {
    AttentionParams p;
    p.w_q = glorot_uniform<S>(d, d, rng);
    p.w_k = glorot_uniform<S>(d, d, rng);
    p.w_v = glorot_uniform<S>(d, d, rng);
    p.beta = beta;
    return p;
  }

  void check(Index d) const {
    if (w_q.rows() != d || w_q.cols() != d || w_k.rows() != d || w_k.cols() != d ||
        w_v.rows() != d || w_v.cols() != d)
      throw ShapeError("attention: weight matrices must be d x d");
    if (!(beta > S(0) && beta <= S(1))) throw ConfigError("attention: beta must be in (0, 1]");
  }
};

template <class S>
struct AttentionOutput {
  Mat<S> z;  // N x d
  Mat<S> c;  // N x N coefficients, only filled by the dense paths
};

namespace detail {

/// Q~ = Q/||Q||_F with the zero-norm guard (0/0 := 0).
template <class S>
Mat<S> frob_normalized(const Mat<S>& a) {
  const S n = a.norm();
  if (n == S(0)) return Mat<S>::Zero(a.rows(), a.cols());
  return a / n;
}

}  // namespace detail

/// Linear all-pair attention in factored form:
///   D = diag(1 + (1/N) Q~ (K~^T 1)),
///   Z = beta * D^{-1} [V + (1/N) Q~ (K~^T V)] + (1 - beta) * Z0.
/// The K~^T V (and K~^T 1) contractions are evaluated first, so no N x N
/// intermediate ever exists and the cost is O(N d^2).
template <class S>
AttentionOutput<S> linear_attention(const Mat<S>& z0, const AttentionParams<S>& p) {
  const Index n = z0.rows();
  const Index d = z0.cols();
  if (n < 1) throw ShapeError("linear_attention: need at least one node");
  p.check(d);

  const Mat<S> qt = detail::frob_normalized<S>(z0 * p.w_q);
  const Mat<S> kt = detail::frob_normalized<S>(z0 * p.w_k);
  const Mat<S> v = z0 * p.w_v;

  const S inv_n = S(1) / static_cast<S>(n);
  const Vec<S> k_colsum = kt.colwise().sum().transpose();            // K~^T 1
  const Vec<S> den = (S(1) + inv_n * (qt * k_colsum).array()).matrix();
  for (Index i = 0; i < n; ++i) {
    if (!(static_cast<double>(den(i)) > kDegeneracyEps))
      throw DegeneracyError("attention normalizer degenerate at row " + std::to_string(i));
  }
  const Mat<S> ktv = kt.transpose() * v;                             // d x d
  Mat<S> numer = v + inv_n * (qt * ktv);
  numer.array().colwise() /= den.array();

  AttentionOutput<S> out;
  out.z = p.beta * numer + (S(1) - p.beta) * z0;
  return out;
}

/// Coefficient matrix from raw pairwise scores s_uv = q~_u . k~_v:
///   C(u,u) = (N + s_uu) / (N + sum_w s_uw),
///   C(u,v) = s_uv       / (N + sum_w s_uw)   (v != u).
/// Rows sum to 1 by construction.
template <class S>
Mat<S> attention_coefficients(Mat<S> scores) {
  if (scores.rows() != scores.cols()) throw ShapeError("attention_coefficients: scores not square");
  const Index n = scores.rows();
  const S nf = static_cast<S>(n);
  for (Index u = 0; u < n; ++u) {
    const S denom = nf + scores.row(u).sum();
    if (!(static_cast<double>(denom) > kDegeneracyEps * static_cast<double>(n)))
      throw DegeneracyError("attention normalizer degenerate at row " + std::to_string(u));
    scores.row(u) /= denom;
    scores(u, u) += nf / denom;
  }
  return scores;
}

/// O(N^2) reference for the same layer. Materializes the coefficient matrix
/// of attention_coefficients() over Q~ K~^T and returns
/// Z = beta * C * V + (1 - beta) * Z0.
template <class S>
AttentionOutput<S> dense_attention_oracle(const Mat<S>& z0, const AttentionParams<S>& p,
                                          Index guard = kDenseAttentionGuard) {
  const Index n = z0.rows();
  if (n > guard) throw SizeError("dense_attention_oracle: N exceeds materialization guard");
  p.check(z0.cols());

  const Mat<S> qt = detail::frob_normalized<S>(z0 * p.w_q);
  const Mat<S> kt = detail::frob_normalized<S>(z0 * p.w_k);
  const Mat<S> v = z0 * p.w_v;

  AttentionOutput<S> out;
  out.c = attention_coefficients<S>(qt * kt.transpose());
  out.z = p.beta * (out.c * v) + (S(1) - p.beta) * z0;
  return out;
}

/// Softmax attention ablation: C = row_softmax(Q K^T / sqrt(d)),
/// Z = beta * C * V + (1 - beta) * Z0. Quadratic; N is guarded.
template <class S>
AttentionOutput<S> softmax_attention(const Mat<S>& z0, const AttentionParams<S>& p,
                                     Index guard = kDenseAttentionGuard) {
  const Index n = z0.rows();
  if (n > guard) throw SizeError("softmax_attention: N exceeds materialization guard");
  p.check(z0.cols());

  const Mat<S> q = z0 * p.w_q;
  const Mat<S> k = z0 * p.w_k;
  const Mat<S> v = z0 * p.w_v;
  const S inv_sqrt_d = S(1) / static_cast<S>(std::sqrt(static_cast<double>(z0.cols())));

  AttentionOutput<S> out;
  out.c = q * k.transpose() * inv_sqrt_d;
  for (Index i = 0; i < n; ++i) {
    const S mx = out.c.row(i).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (out.c.row(i).array() - mx).exp();
    out.c.row(i) = (e / e.sum()).matrix();
  }
  out.z = p.beta * (out.c * v) + (S(1) - p.beta) * z0;
  return out;
}

enum class SelfLoopMode { WithSelfLoop, WithoutSelfLoop };

/// K stacked linear-attention layers with independent parameters. With the
/// self-loop each layer keeps its (1-beta) * Z residual; without it the
/// residual is dropped and the propagated term is renormalized (beta = 1).
template <class S>
Mat<S> multilayer_attention(const Mat<S>& z0, const std::vector<AttentionParams<S>>& layers,
                            SelfLoopMode mode = SelfLoopMode::WithSelfLoop) {
  if (layers.empty()) throw ConfigError("multilayer_attention: need at least one layer");
  Mat<S> z = z0;
  for (const auto& layer : layers) {
    if (mode == SelfLoopMode::WithoutSelfLoop) {
      AttentionParams<S> p = layer;
      p.beta = S(1);
      z = linear_attention(z, p).z;
    } else {
      z = linear_attention(z, layer).z;
    }
  }
  return z;
}

// ---------------------------------------------------------------------------
// Tape builders (training path)

template <class S>
struct AttentionVars {
  typename Tape<S>::Var w_q, w_k, w_v;

  static AttentionVars bind(Tape<S>& t, const AttentionParams<S>& p) {
    return AttentionVars{t.param(p.w_q), t.param(p.w_k), t.param(p.w_v)};
  }
  std::vector<typename Tape<S>::Var> list() const { return {w_q, w_k, w_v}; }
};

/// Differentiable factored attention; mirrors linear_attention() node by node.
template <class S>
typename Tape<S>::Var linear_attention_node(Tape<S>& t, typename Tape<S>::Var z0,
                                            const AttentionVars<S>& w, S beta) {
  const Index n = t.rows(z0);
  const S inv_n = S(1) / static_cast<S>(n);
  auto qt = t.frob_normalize(t.matmul(z0, w.w_q));
  auto kt = t.frob_normalize(t.matmul(z0, w.w_k));
  auto v = t.matmul(z0, w.w_v);
  auto den = t.affine(t.matmul_nt(qt, t.colsum(kt)), inv_n, S(1));  // N x 1
  auto numer = t.lincomb(S(1), v, inv_n, t.matmul(qt, t.matmul_tn(kt, v)));
  auto zhat = t.rowdiv(numer, den);
  return t.lincomb(beta, zhat, S(1) - beta, z0);
}

/// Differentiable softmax-attention ablation layer.
template <class S>
typename Tape<S>::Var softmax_attention_node(Tape<S>& t, typename Tape<S>::Var z0,
                                             const AttentionVars<S>& w, S beta,
                                             Index guard = kDenseAttentionGuard) {
  auto q = t.matmul(z0, w.w_q);
  auto k = t.matmul(z0, w.w_k);
  auto v = t.matmul(z0, w.w_v);
  return t.softmax_attention(q, k, v, z0, beta, guard);
}

}  // namespace sgf
