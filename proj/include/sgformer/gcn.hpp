#pragma once

#include <vector>

#include "sgformer/dense.hpp"
#include "sgformer/graph.hpp"
#include "sgformer/tape.hpp"
#include "sgformer/types.hpp"

namespace sgf {

/// Shallow GCN over a pre-normalized adjacency. Layer k computes
/// relu(dropout(A_hat * Z * W_k)); the last layer stays linear so the output
/// remains in embedding space for the fusion step.
template <class S>
struct GCNParams {
  std::vector<Mat<S>> weights;  // num_layers of d x d
  S dropout = S(0);

  static GCNParams glorot(Index d, int num_layers, S dropout, Rng& rng) {
    if (num_layers < 1 || num_layers > 3)
      throw ConfigError("gcn: num_layers must be in {1, 2, 3}");
    GCNParams p;
    p.dropout = dropout;
    for (int k = 0; k < num_layers; ++k) p.weights.push_back(glorot_uniform<S>(d, d, rng));
    return p;
  }

  int num_layers() const { return static_cast<int>(weights.size()); }
};

template <class S>
Mat<S> gcn_forward(const Mat<S>& z0, const SparseGraph<S>& a_hat, const GCNParams<S>& p,
                   Rng& rng, bool training) {
  if (a_hat.num_nodes != z0.rows()) throw ShapeError("gcn_forward: adjacency/embedding mismatch");
  if (p.weights.empty()) throw ConfigError("gcn_forward: no layers");
  Mat<S> z = z0;
  for (int k = 0; k < p.num_layers(); ++k) {
    if (p.weights[k].rows() != z.cols()) throw ShapeError("gcn_forward: weight shape mismatch");
    z = spmm(a_hat, z) * p.weights[k];
    z = dropout(z, p.dropout, rng, training);
    if (k + 1 < p.num_layers()) z = relu(z);
  }
  return z;
}

template <class S>
struct GCNVars {
  std::vector<typename Tape<S>::Var> weights;

  static GCNVars bind(Tape<S>& t, const GCNParams<S>& p) {
    GCNVars v;
    for (const auto& w : p.weights) v.weights.push_back(t.param(w));
    return v;
  }
  std::vector<typename Tape<S>::Var> list() const { return weights; }
};

template <class S>
typename Tape<S>::Var gcn_forward_node(Tape<S>& t, typename Tape<S>::Var z0,
                                       const SparseGraph<S>& a_hat, const GCNVars<S>& w,
                                       S dropout_rate, Rng& rng, bool training) {
  auto z = z0;
  const int layers = static_cast<int>(w.weights.size());
  for (int k = 0; k < layers; ++k) {
    z = t.matmul(t.spmm(a_hat, z), w.weights[k]);
    z = t.dropout(z, dropout_rate, rng, training);
    if (k + 1 < layers) z = t.relu(z);
  }
  return z;
}

}  // namespace sgf
