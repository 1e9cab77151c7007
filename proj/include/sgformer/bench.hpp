#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgformer/dataset.hpp"
#include "sgformer/train.hpp"
#include "sgformer/types.hpp"

namespace sgf {

struct BenchResult {
  std::string variant;
  Index n = 0;
  Index e = 0;  // undirected edges
  double ms_mean = 0.0;
  double ms_std = 0.0;
  std::size_t mem_bytes = 0;      // analytically accounted peak
  std::size_t rss_bytes = 0;      // OS high-water mark, informational
  bool skipped = false;
  std::string skip_reason;
};

struct BenchConfig {
  std::vector<Index> sizes{10000, 20000, 40000, 80000};
  std::vector<Index> softmax_sizes{2000, 4000, 8000};
  int blocks = 4;
  double avg_degree_in = 8.0;   // expected same-block degree
  double avg_degree_out = 2.0;  // expected cross-block degree
  Index feat_dim = 32;
  Index hidden = 64;
  int warmup_epochs = 2;
  int measured_epochs = 5;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
};

/// Builds the SBM instance for one benchmark size; edge probabilities are
/// scaled so the expected degree stays constant across sizes (E linear in N).
inline NodeDataset bench_dataset(Index n, const BenchConfig& cfg) {
  Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(n)));
  const double block_size = static_cast<double>(n) / cfg.blocks;
  const double p_in = std::min(1.0, cfg.avg_degree_in / std::max(1.0, block_size - 1.0));
  const double p_out =
      std::min(p_in, cfg.avg_degree_out / std::max(1.0, static_cast<double>(n) - block_size));
  NodeDataset ds = generate_sbm(n, cfg.blocks, p_in, p_out, cfg.feat_dim, rng, 1.0);
  SplitMasks masks = make_split(ds, SplitSpec::ratio(0.5, 0.25, 0.25), rng);
  ds.train_mask = std::move(masks.train);
  ds.valid_mask = std::move(masks.valid);
  ds.test_mask = std::move(masks.test);
  return ds;
}

/// Times one full-batch training epoch (forward, loss, backward, step) per
/// configuration. Warm-up epochs run first and are excluded from the
/// statistics. The softmax-dense variant records a skipped entry instead of
/// crashing when it would exceed the materialization guard.
inline std::vector<BenchResult> bench_scaling(const BenchConfig& cfg,
                                              bool include_linear = true,
                                              bool include_softmax = true) {
  std::vector<BenchResult> out;
  auto run_variant = [&](const std::string& name, AttentionKind kind, Index n) {
    BenchResult r;
    r.variant = name;
    r.n = n;
    if (kind == AttentionKind::SoftmaxDense && n > kDenseAttentionGuard) {
      r.skipped = true;
      r.skip_reason = "exceeds dense materialization guard";
      out.push_back(r);
      return;
    }
    NodeDataset ds = bench_dataset(n, cfg);
    r.e = ds.graph.num_undirected_edges();

    TrainConfig tc;
    tc.hidden = cfg.hidden;
    tc.dropout = 0.0;
    tc.num_gcn_layers = 1;
    tc.alpha = 0.5;
    tc.epochs = cfg.warmup_epochs + cfg.measured_epochs;
    tc.seed = cfg.seed;
    tc.precision = cfg.precision;
    tc.attention_kind = kind;
    tc.row_normalize = false;

    TrainReport rep = train(ds, tc);
    double sum = 0.0, sum_sq = 0.0;
    for (int e = cfg.warmup_epochs; e < tc.epochs; ++e) {
      sum += rep.epoch_ms[e];
      sum_sq += rep.epoch_ms[e] * rep.epoch_ms[e];
    }
    const double k = static_cast<double>(cfg.measured_epochs);
    r.ms_mean = sum / k;
    r.ms_std = std::sqrt(std::max(0.0, sum_sq / k - r.ms_mean * r.ms_mean));
    r.mem_bytes = rep.peak_accounted_bytes;
    r.rss_bytes = rep.peak_rss_bytes;
    out.push_back(r);
  };

  if (include_linear)
    for (Index n : cfg.sizes) run_variant("linear", AttentionKind::Linear, n);
  if (include_softmax)
    for (Index n : cfg.softmax_sizes) run_variant("softmax-dense", AttentionKind::SoftmaxDense, n);
  return out;
}

struct ComplexityFit {
  std::string variant;
  double exponent = 0.0;  // slope of log(time) vs log(N)
  double r2 = 0.0;
  std::size_t points = 0;
};

namespace detail {

inline ComplexityFit fit_loglog(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(xs[i]);
    const double y = std::log(ys[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  const double nn = static_cast<double>(n);
  const double cov = sxy - sx * sy / nn;
  const double var_x = sxx - sx * sx / nn;
  const double var_y = syy - sy * sy / nn;
  ComplexityFit f;
  f.points = n;
  f.exponent = cov / var_x;
  f.r2 = (var_y > 0) ? (cov * cov) / (var_x * var_y) : 1.0;
  return f;
}

}  // namespace detail

/// Least-squares slope of log(time) vs log(N) per variant. Requires at least
/// three non-skipped sizes per variant.
inline std::vector<ComplexityFit> fit_complexity(const std::vector<BenchResult>& results) {
  std::vector<std::string> variants;
  for (const auto& r : results) {
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
      variants.push_back(r.variant);
  }
  std::vector<ComplexityFit> fits;
  for (const auto& v : variants) {
    std::vector<double> xs, ys;
    for (const auto& r : results) {
      if (r.variant == v && !r.skipped && r.ms_mean > 0) {
        xs.push_back(static_cast<double>(r.n));
        ys.push_back(r.ms_mean);
      }
    }
    if (xs.size() < 3)
      throw AnalysisError("fit_complexity: variant '" + v + "' has fewer than 3 measured sizes");
    ComplexityFit f = detail::fit_loglog(xs, ys);
    f.variant = v;
    fits.push_back(f);
  }
  return fits;
}

/// R^2 of a plain linear least-squares fit y = a x + b.
inline double linear_fit_r2(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::size_t n = xs.size();
  if (n < 2) throw AnalysisError("linear_fit_r2: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    syy += ys[i] * ys[i];
  }
  const double nn = static_cast<double>(n);
  const double cov = sxy - sx * sy / nn;
  const double var_x = sxx - sx * sx / nn;
  const double var_y = syy - sy * sy / nn;
  if (var_y <= 0) return 1.0;
  return (cov * cov) / (var_x * var_y);
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchResult>& results) {
  os << "variant,N,E,ms_mean,ms_std,mem_bytes\n";
  for (const auto& r : results) {
    if (r.skipped) continue;
    os << r.variant << ',' << r.n << ',' << r.e << ',' << r.ms_mean << ',' << r.ms_std << ','
       << r.mem_bytes << '\n';
  }
}

inline nlohmann::json bench_summary_json(const std::vector<BenchResult>& results,
                                         const std::vector<ComplexityFit>& fits) {
  nlohmann::json j;
  j["results"] = nlohmann::json::array();
  for (const auto& r : results) {
    j["results"].push_back({{"variant", r.variant},
                            {"N", r.n},
                            {"E", r.e},
                            {"ms_mean", r.ms_mean},
                            {"ms_std", r.ms_std},
                            {"mem_bytes", r.mem_bytes},
                            {"rss_bytes", r.rss_bytes},
                            {"skipped", r.skipped}});
  }
  j["fits"] = nlohmann::json::array();
  for (const auto& f : fits) {
    j["fits"].push_back({{"variant", f.variant},
                         {"exponent", f.exponent},
                         {"r2", f.r2},
                         {"points", f.points}});
  }
  return j;
}

}  // namespace sgf
