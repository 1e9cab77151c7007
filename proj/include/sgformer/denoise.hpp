#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "sgformer/rng.hpp"
#include "sgformer/types.hpp"

namespace sgf {

// All theory checks run in 64-bit arithmetic regardless of the training
// precision; the tolerances are too tight for float.

inline constexpr double kRowSumTol = 1e-9;

inline void check_row_stochastic(const Mat<double>& c, double tol = kRowSumTol) {
  if (c.rows() != c.cols()) throw ShapeError("denoise: coefficient matrix must be square");
  for (Index u = 0; u < c.rows(); ++u) {
    if (std::abs(c.row(u).sum() - 1.0) > tol)
      throw DegeneracyError("denoise: row " + std::to_string(u) + " does not sum to 1");
  }
}

/// Signal-denoising instance: anchor embeddings, a row-stochastic (possibly
/// signed) coefficient matrix, smoothness weight lambda, step weight tau.
struct DenoiseProblem {
  Mat<double> z_ref;  // N x d anchor
  Mat<double> c;      // N x N, rows sum to 1
  double lambda = 1.0;
  double tau = 0.5;

  DenoiseProblem(Mat<double> z_ref_, Mat<double> c_, double lambda_, double tau_)
      : z_ref(std::move(z_ref_)), c(std::move(c_)), lambda(lambda_), tau(tau_) {
    if (lambda <= 0.0) throw ConfigError("denoise: lambda must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("denoise: tau must be in (0, 1]");
    check_row_stochastic(c);
    if (z_ref.rows() != c.rows()) throw ShapeError("denoise: anchor rows != coefficient rows");
  }
};

/// E(Z) = sum_u ||z_u - z_ref_u||^2 + lambda * sum_{u,v} c_uv ||z_u - z_v||^2
/// (the pairwise sum runs over all ordered pairs).
inline double energy(const Mat<double>& z, const DenoiseProblem& prob) {
  if (z.rows() != prob.z_ref.rows() || z.cols() != prob.z_ref.cols())
    throw ShapeError("energy: Z shape != anchor shape");
  double anchor = (z - prob.z_ref).squaredNorm();
  double pair = 0.0;
  for (Index u = 0; u < z.rows(); ++u)
    for (Index v = 0; v < z.rows(); ++v)
      pair += prob.c(u, v) * (z.row(u) - z.row(v)).squaredNorm();
  return anchor + prob.lambda * pair;
}

/// One descent step of size tau/(2 lambda) using the per-row gradient
///   grad_u = 2 (z_u - z_ref_u) + 2 lambda sum_v c_uv (z_u - z_v),
/// i.e. each row's own local energy differentiated with the other rows held
/// fixed (this is the form whose fixed step reproduces the attention update;
/// it is not the full gradient of energy() unless C is diagonal).
inline Mat<double> gradient_step(const DenoiseProblem& prob, const Mat<double>& z_start) {
  if (z_start.rows() != prob.z_ref.rows() || z_start.cols() != prob.z_ref.cols())
    throw ShapeError("gradient_step: Z shape != anchor shape");
  const Index n = z_start.rows();
  // sum_v c_uv (z_u - z_v) = (rowsum(C)) z_u - (C Z)_u ; rowsums are 1.
  Mat<double> grad = 2.0 * (z_start - prob.z_ref) +
                     2.0 * prob.lambda * (z_start - prob.c * z_start);
  return z_start - (prob.tau / (2.0 * prob.lambda)) * grad;
}

/// Per-row local energy used by the finite-difference oracle for
/// gradient_step: rows other than u enter as constants.
inline double row_energy(const Mat<double>& z_u, Index u, const Mat<double>& z_fixed,
                         const DenoiseProblem& prob) {
  double e = (z_u - prob.z_ref.row(u)).squaredNorm();
  double pair = 0.0;
  for (Index v = 0; v < z_fixed.rows(); ++v)
    pair += prob.c(u, v) * (z_u - z_fixed.row(v)).squaredNorm();
  return e + prob.lambda * pair;
}

/// Max abs difference between the attention update
/// (1 - tau) Z + tau C Z and the denoising gradient step started at the
/// anchor. Theorem: the difference is zero up to rounding.
inline double verify_theorem1(const Mat<double>& z_prev, const Mat<double>& c, double tau,
                              double lambda) {
  DenoiseProblem prob(z_prev, c, lambda, tau);
  Mat<double> attention_update = (1.0 - tau) * z_prev + tau * (c * z_prev);
  Mat<double> descent = gradient_step(prob, z_prev);
  return (attention_update - descent).cwiseAbs().maxCoeff();
}

/// Collapses a K-layer stack into a single coefficient matrix:
///   P_k = (1 - tau) I + tau C_k,   P* = P_K ... P_1,
///   C* = (1/tau*) (P* - (1 - tau*) I).
/// Rows of C* sum to 1 even when entries go negative.
inline std::pair<Mat<double>, Mat<double>> collapse_to_one_layer(
    const std::vector<Mat<double>>& cs, double tau, double tau_star) {
  if (cs.empty()) throw ConfigError("collapse: need at least one layer");
  if (!(tau > 0.0 && tau <= 1.0) || !(tau_star > 0.0 && tau_star <= 1.0))
    throw ConfigError("collapse: tau and tau* must be in (0, 1]");
  for (const auto& c : cs) check_row_stochastic(c);
  const Index n = cs[0].rows();
  Mat<double> p_star = Mat<double>::Identity(n, n);
  for (const auto& c : cs) {
    Mat<double> p_k = (1.0 - tau) * Mat<double>::Identity(n, n) + tau * c;
    p_star = p_k * p_star;  // proof order: P* = P^(K) ... P^(1)
  }
  Mat<double> c_star = (p_star - (1.0 - tau_star) * Mat<double>::Identity(n, n)) / tau_star;
  return {p_star, c_star};
}

/// Row-stochastic matrix with strictly positive entries (softmax of
/// Gaussian logits).
inline Mat<double> random_row_stochastic(Index n, Rng& rng, double logit_scale = 1.0) {
  Mat<double> c(n, n);
  for (Index u = 0; u < n; ++u) {
    for (Index v = 0; v < n; ++v) c(u, v) = logit_scale * rng.normal();
    const double mx = c.row(u).maxCoeff();
    double sum = 0.0;
    for (Index v = 0; v < n; ++v) {
      c(u, v) = std::exp(c(u, v) - mx);
      sum += c(u, v);
    }
    c.row(u) /= sum;
  }
  return c;
}

/// Samples K random layers and embeddings, runs the K-layer update, then the
/// collapsed single gradient step; returns the max abs discrepancy.
inline double verify_theorem2(int k, Index n, Index d, Rng& rng, double tau = 0.5,
                              double tau_star = 0.5, double lambda = 1.0) {
  if (k < 1) throw ConfigError("verify_theorem2: K must be >= 1");
  std::vector<Mat<double>> cs;
  for (int i = 0; i < k; ++i) cs.push_back(random_row_stochastic(n, rng));
  Mat<double> z0(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) z0(i, j) = rng.normal();

  Mat<double> z = z0;
  for (const auto& c : cs) z = (1.0 - tau) * z + tau * (c * z);

  auto [p_star, c_star] = collapse_to_one_layer(cs, tau, tau_star);
  DenoiseProblem prob(z0, c_star, lambda, tau_star);
  Mat<double> collapsed = gradient_step(prob, z0);
  return (z - collapsed).cwiseAbs().maxCoeff();
}

}  // namespace sgf
