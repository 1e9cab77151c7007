#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sgformer/types.hpp"

namespace sgf {

/// Undirected graph in CSR form. Storage is directed (each undirected edge
/// appears as two entries) but construction always symmetrizes, so
/// (u,v) present implies (v,u) present. Column indices are sorted within a
/// row and carry no duplicates.
template <class S = double>
struct SparseGraph {
  Index num_nodes = 0;
  std::vector<Index> row_ptr;  // length num_nodes + 1
  std::vector<Index> col_idx;
  std::vector<S> edge_val;     // aligned with col_idx

  Index nnz() const { return static_cast<Index>(col_idx.size()); }

  /// Directed entry count / 2 (valid because storage is symmetrized).
  Index num_undirected_edges() const { return nnz() / 2; }

  Index degree(Index u) const { return row_ptr[u + 1] - row_ptr[u]; }

  bool has_edge(Index u, Index v) const {
    auto b = col_idx.begin() + row_ptr[u];
    auto e = col_idx.begin() + row_ptr[u + 1];
    return std::binary_search(b, e, v);
  }

  template <class T>
  SparseGraph<T> cast() const {
    SparseGraph<T> g;
    g.num_nodes = num_nodes;
    g.row_ptr = row_ptr;
    g.col_idx = col_idx;
    g.edge_val.reserve(edge_val.size());
    for (S v : edge_val) g.edge_val.push_back(static_cast<T>(v));
    return g;
  }

  Mat<S> to_dense() const {
    Mat<S> a = Mat<S>::Zero(num_nodes, num_nodes);
    for (Index u = 0; u < num_nodes; ++u)
      for (Index k = row_ptr[u]; k < row_ptr[u + 1]; ++k) a(u, col_idx[k]) = edge_val[k];
    return a;
  }

  std::size_t footprint_bytes() const {
    return row_ptr.size() * sizeof(Index) + col_idx.size() * sizeof(Index) +
           edge_val.size() * sizeof(S);
  }
};

/// Builds a symmetric CSR graph from a directed edge list. Self-loops and
/// duplicates (in either direction) are dropped; every surviving edge is
/// stored in both directions with value 1.
template <class S = double>
SparseGraph<S> graph_from_edges(Index num_nodes, std::vector<std::pair<Index, Index>> edges) {
  for (auto& [u, v] : edges) {
    if (u < 0 || u >= num_nodes || v < 0 || v >= num_nodes)
      throw GraphError("graph_from_edges: node id out of range");
  }
  std::vector<std::pair<Index, Index>> dir;
  dir.reserve(edges.size() * 2);
  for (auto [u, v] : edges) {
    if (u == v) continue;
    dir.emplace_back(u, v);
    dir.emplace_back(v, u);
  }
  std::sort(dir.begin(), dir.end());
  dir.erase(std::unique(dir.begin(), dir.end()), dir.end());

  SparseGraph<S> g;
  g.num_nodes = num_nodes;
  g.row_ptr.assign(num_nodes + 1, 0);
  g.col_idx.resize(dir.size());
  g.edge_val.assign(dir.size(), S(1));
  for (auto [u, v] : dir) ++g.row_ptr[u + 1];
  for (Index u = 0; u < num_nodes; ++u) g.row_ptr[u + 1] += g.row_ptr[u];
  for (std::size_t k = 0; k < dir.size(); ++k) g.col_idx[k] = dir[k].second;
  return g;
}

template <class S>
SparseGraph<S> graph_from_dense(const Mat<S>& a) {
  if (a.rows() != a.cols()) throw ShapeError("graph_from_dense: matrix must be square");
  SparseGraph<S> g;
  g.num_nodes = a.rows();
  g.row_ptr.assign(a.rows() + 1, 0);
  for (Index u = 0; u < a.rows(); ++u) {
    for (Index v = 0; v < a.cols(); ++v) {
      if (a(u, v) != S(0)) {
        g.col_idx.push_back(v);
        g.edge_val.push_back(a(u, v));
      }
    }
    g.row_ptr[u + 1] = static_cast<Index>(g.col_idx.size());
  }
  return g;
}

/// Symmetric GCN normalization. With self-loops the result is
/// D^{-1/2} (A + I) D^{-1/2}, D taken from A + I, so an isolated node gets
/// a unit diagonal entry. Without self-loops zero-degree rows stay zero.
template <class S>
SparseGraph<S> normalize_adjacency(const SparseGraph<S>& g, bool add_self_loops = true) {
  const Index n = g.num_nodes;
  std::vector<double> deg(n, 0.0);
  for (Index u = 0; u < n; ++u) deg[u] = static_cast<double>(g.degree(u)) + (add_self_loops ? 1.0 : 0.0);

  std::vector<double> inv_sqrt(n, 0.0);
  for (Index u = 0; u < n; ++u) inv_sqrt[u] = deg[u] > 0.0 ? 1.0 / std::sqrt(deg[u]) : 0.0;

  SparseGraph<S> out;
  out.num_nodes = n;
  out.row_ptr.assign(n + 1, 0);
  out.col_idx.reserve(g.col_idx.size() + (add_self_loops ? n : 0));
  out.edge_val.reserve(g.col_idx.size() + (add_self_loops ? n : 0));
  for (Index u = 0; u < n; ++u) {
    bool loop_emitted = false;
    for (Index k = g.row_ptr[u]; k < g.row_ptr[u + 1]; ++k) {
      const Index v = g.col_idx[k];
      if (add_self_loops && !loop_emitted && v > u) {
        out.col_idx.push_back(u);
        out.edge_val.push_back(static_cast<S>(inv_sqrt[u] * inv_sqrt[u]));
        loop_emitted = true;
      }
      out.col_idx.push_back(v);
      out.edge_val.push_back(static_cast<S>(inv_sqrt[u] * inv_sqrt[v]));
    }
    if (add_self_loops && !loop_emitted) {
      out.col_idx.push_back(u);
      out.edge_val.push_back(static_cast<S>(inv_sqrt[u] * inv_sqrt[u]));
    }
    out.row_ptr[u + 1] = static_cast<Index>(out.col_idx.size());
  }
  return out;
}

/// Sparse-dense product A * Z. Accumulation order is fixed (CSR order per
/// row), so results are reproducible bit-for-bit.
template <class S>
Mat<S> spmm(const SparseGraph<S>& a, const Mat<S>& z) {
  if (a.num_nodes != z.rows()) throw ShapeError("spmm: graph rows != matrix rows");
  Mat<S> out = Mat<S>::Zero(a.num_nodes, z.cols());
  for (Index u = 0; u < a.num_nodes; ++u) {
    auto row = out.row(u);
    for (Index k = a.row_ptr[u]; k < a.row_ptr[u + 1]; ++k) {
      row += a.edge_val[k] * z.row(a.col_idx[k]);
    }
  }
  return out;
}

/// Induced subgraph on `nodes`; position in the list becomes the new id.
template <class S>
SparseGraph<S> induced_subgraph(const SparseGraph<S>& g, const std::vector<Index>& nodes) {
  std::vector<Index> local(g.num_nodes, -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] < 0 || nodes[i] >= g.num_nodes)
      throw GraphError("induced_subgraph: node id out of range");
    local[nodes[i]] = static_cast<Index>(i);
  }
  SparseGraph<S> out;
  out.num_nodes = static_cast<Index>(nodes.size());
  out.row_ptr.assign(nodes.size() + 1, 0);
  std::vector<std::pair<Index, S>> row_buf;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Index u = nodes[i];
    row_buf.clear();
    for (Index k = g.row_ptr[u]; k < g.row_ptr[u + 1]; ++k) {
      const Index lv = local[g.col_idx[k]];
      if (lv >= 0) row_buf.emplace_back(lv, g.edge_val[k]);
    }
    std::sort(row_buf.begin(), row_buf.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [v, w] : row_buf) {
      out.col_idx.push_back(v);
      out.edge_val.push_back(w);
    }
    out.row_ptr[i + 1] = static_cast<Index>(out.col_idx.size());
  }
  return out;
}

}  // namespace sgf
