#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sgformer/types.hpp"

namespace sgf {

/// Mean over masked rows of -log softmax(logits)[label], via log-sum-exp.
template <class S>
double cross_entropy(const Mat<S>& logits, const VecXi& labels, const Mask& mask) {
  if (labels.size() != logits.rows()) throw ShapeError("cross_entropy: labels length != rows");
  if (static_cast<Index>(mask.size()) != logits.rows())
    throw ShapeError("cross_entropy: mask length != rows");
  const Index m = mask_count(mask);
  if (m == 0) throw ConfigError("cross_entropy: empty mask");
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    if (labels[i] < 0 || labels[i] >= logits.cols())
      throw ConfigError("cross_entropy: label out of range");
    const double mx = static_cast<double>(logits.row(i).maxCoeff());
    double lse = 0.0;
    for (Index c = 0; c < logits.cols(); ++c)
      lse += std::exp(static_cast<double>(logits(i, c)) - mx);
    total += std::log(lse) + mx - static_cast<double>(logits(i, labels[i]));
  }
  return total / static_cast<double>(m);
}

/// Mean over masked rows and tasks of stable binary cross-entropy.
template <class S>
double bce_multilabel(const Mat<S>& logits, const Mat<S>& targets, const Mask& mask) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw ShapeError("bce: target shape != logits shape");
  if (static_cast<Index>(mask.size()) != logits.rows())
    throw ShapeError("bce: mask length != rows");
  const Index m = mask_count(mask);
  if (m == 0) throw ConfigError("bce: empty mask");
  double total = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    for (Index c = 0; c < logits.cols(); ++c) {
      const double x = static_cast<double>(logits(i, c));
      const double y = static_cast<double>(targets(i, c));
      total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
  }
  return total / static_cast<double>(m * logits.cols());
}

/// Fraction of masked nodes whose predicted class matches the label.
inline double metric_accuracy(const VecXi& predictions, const VecXi& labels, const Mask& mask) {
  if (predictions.size() != labels.size()) throw ShapeError("accuracy: size mismatch");
  if (static_cast<Index>(mask.size()) != labels.size())
    throw ShapeError("accuracy: mask length mismatch");
  const Index m = mask_count(mask);
  if (m == 0) throw MetricError("accuracy: empty mask");
  Index correct = 0;
  for (Index i = 0; i < labels.size(); ++i)
    if (mask[i] && predictions[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(m);
}

/// Rank-based ROC-AUC for one score column over masked nodes, ties handled
/// by midrank: AUC = (sum of positive ranks - P(P+1)/2) / (P * N).
template <class S>
double rocauc_single(const Vec<S>& scores, const Vec<S>& targets, const Mask& mask,
                     bool* degenerate = nullptr) {
  std::vector<Index> idx;
  for (Index i = 0; i < scores.size(); ++i)
    if (mask[i]) idx.push_back(i);
  Index pos = 0;
  for (Index i : idx) pos += (targets[i] > S(0.5));
  const Index neg = static_cast<Index>(idx.size()) - pos;
  if (pos == 0 || neg == 0) {
    if (degenerate) *degenerate = true;
    return 0.5;
  }
  if (degenerate) *degenerate = false;
  std::sort(idx.begin(), idx.end(),
            [&](Index a, Index b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>((i + 1) + (j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (targets[idx[k]] > S(0.5)) pos_rank_sum += midrank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

/// Mean over tasks of rank-based AUC; tasks with a single class inside the
/// mask are skipped. Throws if every task is degenerate.
template <class S>
double metric_rocauc(const Mat<S>& scores, const Mat<S>& targets, const Mask& mask) {
  if (scores.rows() != targets.rows() || scores.cols() != targets.cols())
    throw ShapeError("rocauc: score/target shape mismatch");
  if (static_cast<Index>(mask.size()) != scores.rows())
    throw ShapeError("rocauc: mask length mismatch");
  if (mask_count(mask) == 0) throw MetricError("rocauc: empty mask");
  double total = 0.0;
  int used = 0;
  for (Index t = 0; t < scores.cols(); ++t) {
    bool degenerate = false;
    const double auc = rocauc_single<S>(scores.col(t), targets.col(t), mask, &degenerate);
    if (!degenerate) {
      total += auc;
      ++used;
    }
  }
  if (used == 0) throw MetricError("rocauc: all tasks degenerate in mask");
  return total / used;
}

}  // namespace sgf
