#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sgformer/dense.hpp"
#include "sgformer/graph.hpp"
#include "sgformer/rng.hpp"
#include "sgformer/types.hpp"

namespace sgf {

enum class TaskKind { SingleLabel, MultiLabel };

/// Graph + features + labels + split masks. Immutable after construction;
/// safe to share read-only across threads.
struct NodeDataset {
  SparseGraph<double> graph;
  Mat<double> features;      // N x D
  VecXi labels;              // N (single-label); empty for multi-label
  Mat<double> label_matrix;  // N x T 0/1 (multi-label); 0x0 otherwise
  Mask train_mask, valid_mask, test_mask;
  int num_classes = 0;       // classes (single-label) or tasks (multi-label)
  TaskKind task = TaskKind::SingleLabel;

  Index num_nodes() const { return graph.num_nodes; }
  Index feat_dim() const { return features.cols(); }

  void validate() const {
    const Index n = num_nodes();
    if (features.rows() != n) throw ShapeError("dataset: feature rows != num nodes");
    if (task == TaskKind::SingleLabel && labels.size() != n)
      throw ShapeError("dataset: label count != num nodes");
    if (task == TaskKind::MultiLabel && label_matrix.rows() != n)
      throw ShapeError("dataset: label matrix rows != num nodes");
    auto check_mask = [n](const Mask& m, const char* name) {
      if (!m.empty() && static_cast<Index>(m.size()) != n)
        throw ShapeError(std::string("dataset: bad mask length: ") + name);
    };
    check_mask(train_mask, "train");
    check_mask(valid_mask, "valid");
    check_mask(test_mask, "test");
    for (Index i = 0; i < n; ++i) {
      const int in_train = !train_mask.empty() && train_mask[i];
      const int in_valid = !valid_mask.empty() && valid_mask[i];
      const int in_test = !test_mask.empty() && test_mask[i];
      if (in_train + in_valid + in_test > 1) throw ConfigError("dataset: masks overlap");
      if ((in_train || in_valid || in_test) && task == TaskKind::SingleLabel) {
        if (labels[i] < 0 || labels[i] >= num_classes)
          throw ConfigError("dataset: masked node has invalid label");
      }
    }
  }

  std::size_t footprint_bytes() const {
    return graph.footprint_bytes() + sizeof(double) * features.size() +
           sizeof(int) * labels.size() + sizeof(double) * label_matrix.size() +
           train_mask.size() + valid_mask.size() + test_mask.size();
  }
};

/// In-place L1 row normalization of the feature matrix (bag-of-words
/// convention); all-zero rows are left untouched.
inline void row_normalize_features(Mat<double>& x) {
  for (Index i = 0; i < x.rows(); ++i) {
    const double s = x.row(i).cwiseAbs().sum();
    if (s > 0.0) x.row(i) /= s;
  }
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  enum class Kind { PerClassCount, Ratio, ExplicitFiles };
  Kind kind = Kind::PerClassCount;

  // PerClassCount
  Index per_class = 20;
  Index valid_count = 500;
  Index test_count = 1000;

  // Ratio
  double train_ratio = 0.5, valid_ratio = 0.25, test_ratio = 0.25;

  static SplitSpec per_class_count(Index per_class, Index valid, Index test) {
    SplitSpec s;
    s.kind = Kind::PerClassCount;
    s.per_class = per_class;
    s.valid_count = valid;
    s.test_count = test;
    return s;
  }
  static SplitSpec ratio(double tr, double va, double te) {
    SplitSpec s;
    s.kind = Kind::Ratio;
    s.train_ratio = tr;
    s.valid_ratio = va;
    s.test_ratio = te;
    return s;
  }
};

struct SplitMasks {
  Mask train, valid, test;
};

/// Draws disjoint train/valid/test masks. Per-class kind samples exactly
/// `per_class` training nodes from each class uniformly without replacement,
/// then valid/test from the remaining pool.
inline SplitMasks make_split(const NodeDataset& ds, const SplitSpec& spec, Rng& rng) {
  const Index n = ds.num_nodes();
  SplitMasks out;
  out.train.assign(n, 0);
  out.valid.assign(n, 0);
  out.test.assign(n, 0);

  if (spec.kind == SplitSpec::Kind::Ratio) {
    if (spec.train_ratio < 0 || spec.valid_ratio < 0 || spec.test_ratio < 0 ||
        spec.train_ratio + spec.valid_ratio + spec.test_ratio > 1.0 + 1e-9)
      throw ConfigError("make_split: ratios must be non-negative and sum to <= 1");
    std::vector<Index> perm(n);
    for (Index i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    const Index n_train = static_cast<Index>(std::llround(spec.train_ratio * n));
    const Index n_valid = static_cast<Index>(std::llround(spec.valid_ratio * n));
    const Index n_test = std::min<Index>(n - n_train - n_valid,
                                         static_cast<Index>(std::llround(spec.test_ratio * n)));
    for (Index i = 0; i < n_train; ++i) out.train[perm[i]] = 1;
    for (Index i = n_train; i < n_train + n_valid; ++i) out.valid[perm[i]] = 1;
    for (Index i = n_train + n_valid; i < n_train + n_valid + n_test; ++i) out.test[perm[i]] = 1;
    return out;
  }

  if (spec.kind == SplitSpec::Kind::PerClassCount) {
    if (ds.task != TaskKind::SingleLabel)
      throw ConfigError("make_split: per-class split needs single-label data");
    std::vector<std::vector<Index>> by_class(ds.num_classes);
    for (Index i = 0; i < n; ++i) {
      if (ds.labels[i] >= 0 && ds.labels[i] < ds.num_classes) by_class[ds.labels[i]].push_back(i);
    }
    for (int c = 0; c < ds.num_classes; ++c) {
      if (static_cast<Index>(by_class[c].size()) < spec.per_class)
        throw ConfigError("make_split: class " + std::to_string(c) + " has fewer than " +
                          std::to_string(spec.per_class) + " nodes");
      rng.shuffle(by_class[c]);
      for (Index i = 0; i < spec.per_class; ++i) out.train[by_class[c][i]] = 1;
    }
    std::vector<Index> rest;
    for (Index i = 0; i < n; ++i)
      if (!out.train[i]) rest.push_back(i);
    if (static_cast<Index>(rest.size()) < spec.valid_count + spec.test_count)
      throw ConfigError("make_split: not enough nodes left for valid/test");
    rng.shuffle(rest);
    for (Index i = 0; i < spec.valid_count; ++i) out.valid[rest[i]] = 1;
    for (Index i = spec.valid_count; i < spec.valid_count + spec.test_count; ++i)
      out.test[rest[i]] = 1;
    return out;
  }

  throw ConfigError("make_split: explicit-files splits are read by the loader");
}

// ---------------------------------------------------------------------------
// Synthetic graphs

/// Stochastic block model with contiguous equal-size blocks, block id as
/// label, and class-mean Gaussian features. Edge sampling uses geometric
/// skips, so generation is O(nodes + edges) rather than O(n^2).
inline NodeDataset generate_sbm(Index n, int blocks, double p_in, double p_out, Index feat_dim,
                                Rng& rng, double feature_noise = 1.0) {
  if (n <= 0 || blocks <= 0 || blocks > n) throw ConfigError("generate_sbm: need 0 < blocks <= n");
  if (!(p_out >= 0.0 && p_out <= p_in && p_in <= 1.0))
    throw ConfigError("generate_sbm: need 0 <= p_out <= p_in <= 1");
  if (feat_dim <= 0) throw ConfigError("generate_sbm: feat_dim must be positive");

  auto block_of = [&](Index u) { return static_cast<int>(u * blocks / n); };

  // Bernoulli(p) hits over the linearized upper-triangle pair space via
  // geometric skips, one stream per pair class (same-block / cross-block).
  std::vector<std::pair<Index, Index>> edges;
  const std::uint64_t total_pairs = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  auto row_start = [&](Index r) { return static_cast<std::uint64_t>(r) * (2 * n - r - 1) / 2; };
  auto pair_at = [&](std::uint64_t t) {
    const double nn = static_cast<double>(n);
    Index u = static_cast<Index>(nn - 0.5 - std::sqrt((nn - 0.5) * (nn - 0.5) - 2.0 * static_cast<double>(t)));
    while (u > 0 && row_start(u) > t) --u;
    while (row_start(u + 1) <= t) ++u;
    const Index v = u + 1 + static_cast<Index>(t - row_start(u));
    return std::make_pair(u, v);
  };
  enum class Keep { Same, Cross, All };
  auto sample_stream = [&](double p, Keep keep) {
    if (p <= 0.0) return;
    const bool certain = p >= 1.0;
    const double log1mp = certain ? 0.0 : std::log1p(-p);
    auto skip = [&]() -> std::uint64_t {
      if (certain) return 0;
      double uni = rng.uniform();
      while (uni <= 0.0) uni = rng.uniform();
      return static_cast<std::uint64_t>(std::floor(std::log(uni) / log1mp));
    };
    for (std::uint64_t t = skip(); t < total_pairs; t += 1 + skip()) {
      auto [u, v] = pair_at(t);
      const bool same = block_of(u) == block_of(v);
      if (keep == Keep::All || (keep == Keep::Same) == same) edges.emplace_back(u, v);
    }
  };
  if (p_in == p_out) {
    sample_stream(p_in, Keep::All);
  } else {
    sample_stream(p_in, Keep::Same);
    sample_stream(p_out, Keep::Cross);
  }

  NodeDataset ds;
  ds.graph = graph_from_edges<double>(n, std::move(edges));
  ds.num_classes = blocks;
  ds.task = TaskKind::SingleLabel;
  ds.labels.resize(n);
  for (Index u = 0; u < n; ++u) ds.labels[u] = block_of(u);

  Mat<double> means = gaussian<double>(blocks, feat_dim, rng);
  ds.features.resize(n, feat_dim);
  for (Index u = 0; u < n; ++u) {
    for (Index j = 0; j < feat_dim; ++j)
      ds.features(u, j) = means(ds.labels[u], j) + feature_noise * rng.normal();
  }
  ds.validate();
  return ds;
}

/// Induced subgraph on a uniform node sample, ids re-indexed densely in
/// draw order. Masks and labels follow the sampled nodes.
inline NodeDataset subsample_nodes(const NodeDataset& ds, Index n, Rng& rng) {
  const Index total = ds.num_nodes();
  if (n > total) throw ConfigError("subsample_nodes: sample larger than dataset");
  std::vector<Index> perm(total);
  for (Index i = 0; i < total; ++i) perm[i] = i;
  rng.shuffle(perm);
  perm.resize(n);

  NodeDataset out;
  out.graph = induced_subgraph(ds.graph, perm);
  out.features.resize(n, ds.features.cols());
  out.num_classes = ds.num_classes;
  out.task = ds.task;
  if (ds.task == TaskKind::SingleLabel) out.labels.resize(n);
  if (ds.label_matrix.size() > 0) out.label_matrix.resize(n, ds.label_matrix.cols());
  auto pick_mask = [&](const Mask& src, Mask& dst) {
    if (src.empty()) return;
    dst.assign(n, 0);
    for (Index i = 0; i < n; ++i) dst[i] = src[perm[i]];
  };
  for (Index i = 0; i < n; ++i) {
    out.features.row(i) = ds.features.row(perm[i]);
    if (ds.task == TaskKind::SingleLabel) out.labels[i] = ds.labels[perm[i]];
    if (ds.label_matrix.size() > 0) out.label_matrix.row(i) = ds.label_matrix.row(perm[i]);
  }
  pick_mask(ds.train_mask, out.train_mask);
  pick_mask(ds.valid_mask, out.valid_mask);
  pick_mask(ds.test_mask, out.test_mask);
  out.validate();
  return out;
}

}  // namespace sgf
