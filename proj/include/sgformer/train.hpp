#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgformer/adam.hpp"
#include "sgformer/dataset.hpp"
#include "sgformer/loss.hpp"
#include "sgformer/model.hpp"
#include "sgformer/tape.hpp"
#include "sgformer/types.hpp"

namespace sgf {

enum class Precision { F32, F64 };

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 5e-4;
  Index hidden = 64;
  double dropout = 0.5;
  int num_gcn_layers = 2;
  int num_attn_layers = 1;
  double alpha = 0.5;
  double beta = 0.5;
  int epochs = 300;
  Index batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  Precision precision = Precision::F64;
  AttentionKind attention_kind = AttentionKind::Linear;
  bool attention_self_loop = true;
  bool row_normalize = true;  // L1-normalize feature rows before training
  Index eval_full_threshold = 200000;
  std::uint64_t eval_partition_seed = 0;  // fixed so batched eval is reproducible

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"weight_decay", weight_decay},
            {"hidden", hidden},
            {"dropout", dropout},
            {"num_gcn_layers", num_gcn_layers},
            {"num_attn_layers", num_attn_layers},
            {"alpha", alpha},
            {"beta", beta},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"seed", seed},
            {"precision", precision == Precision::F64 ? "f64" : "f32"},
            {"attention", attention_kind == AttentionKind::Linear ? "linear" : "softmax"},
            {"attention_self_loop", attention_self_loop},
            {"row_normalize", row_normalize}};
  }
};

/// Per-run record. Metrics and losses are deterministic given (seed, build,
/// precision); wall-clock and RSS are kept in a separate section so the
/// deterministic part can be compared byte-for-byte across reruns.
struct TrainReport {
  TrainConfig config;
  std::vector<double> epoch_loss, epoch_valid, epoch_test;
  std::vector<double> epoch_ms;
  int best_epoch = -1;  // argmax valid, earliest on ties
  double best_valid = 0.0;
  double test_at_best_valid = 0.0;
  double final_valid = 0.0, final_test = 0.0;
  double total_ms = 0.0;
  std::size_t peak_accounted_bytes = 0;
  std::size_t peak_rss_bytes = 0;

  nlohmann::json deterministic_json() const {
    return {{"config", config.to_json()},
            {"result",
             {{"best_epoch", best_epoch},
              {"best_valid", best_valid},
              {"test_at_best_valid", test_at_best_valid},
              {"final_valid", final_valid},
              {"final_test", final_test},
              {"peak_accounted_bytes", peak_accounted_bytes},
              {"history",
               {{"loss", epoch_loss}, {"valid", epoch_valid}, {"test", epoch_test}}}}}};
  }

  nlohmann::json to_json() const {
    nlohmann::json j = deterministic_json();
    j["timing"] = {{"epoch_ms", epoch_ms},
                   {"total_ms", total_ms},
                   {"peak_rss_bytes", peak_rss_bytes}};
    return j;
  }

  void write_history_csv(std::ostream& os) const {
    os << "epoch,loss,valid,test,ms\n";
    for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
      os << e << ',' << epoch_loss[e] << ',' << epoch_valid[e] << ',' << epoch_test[e] << ','
         << (e < epoch_ms.size() ? epoch_ms[e] : 0.0) << '\n';
    }
  }
};

inline std::size_t read_peak_rss_bytes() {
  std::ifstream is("/proc/self/status");
  std::string key;
  while (is >> key) {
    if (key == "VmHWM:") {
      std::size_t kb = 0;
      is >> kb;
      return kb * 1024;
    }
    is.ignore(4096, '\n');
  }
  return 0;
}

namespace detail {

/// Evaluates the model in inference mode; returns the metric for each mask
/// (accuracy for single-label, ROC-AUC for multi-label).
template <class S>
struct EvalContext {
  const NodeDataset* ds = nullptr;
  Mat<S> features;            // possibly row-normalized, cast
  SparseGraph<S> a_hat;       // normalized full graph
  Mat<S> targets;             // multi-label only
  Index eval_full_threshold = 0;
  std::uint64_t eval_partition_seed = 0;
  Index batch_size = 0;

  Mat<S> full_logits(const SGFormerParams<S>& p, Rng& rng) const {
    if (ds->num_nodes() <= eval_full_threshold || batch_size == 0) {
      return forward(features, a_hat, p, rng, /*training=*/false).logits;
    }
    // Batched inference with the training partition scheme and a fixed seed.
    const Index n = ds->num_nodes();
    Mat<S> logits = Mat<S>::Zero(n, p.out_dim());
    std::vector<Index> perm(n);
    for (Index i = 0; i < n; ++i) perm[i] = i;
    Rng part_rng(eval_partition_seed);
    part_rng.shuffle(perm);
    for (Index start = 0; start < n; start += batch_size) {
      const Index len = std::min(batch_size, n - start);
      std::vector<Index> batch(perm.begin() + start, perm.begin() + start + len);
      SparseGraph<S> sub = normalize_adjacency(induced_subgraph(ds->graph, batch)).template cast<S>();
      Mat<S> bx(len, features.cols());
      for (Index i = 0; i < len; ++i) bx.row(i) = features.row(batch[i]);
      Mat<S> bl = forward(bx, sub, p, rng, /*training=*/false).logits;
      for (Index i = 0; i < len; ++i) logits.row(batch[i]) = bl.row(i);
    }
    return logits;
  }

  double metric(const Mat<S>& logits, const Mask& mask) const {
    if (mask_count(mask) == 0) return 0.0;
    if (ds->task == TaskKind::SingleLabel)
      return metric_accuracy(predict_classes(logits), ds->labels, mask);
    return metric_rocauc(logits, targets, mask);
  }
};

template <class S>
typename Tape<S>::Var loss_node(Tape<S>& t, typename Tape<S>::Var logits, const NodeDataset& ds,
                                const Mat<S>& targets, const VecXi& labels, const Mask& mask) {
  if (ds.task == TaskKind::SingleLabel) return t.softmax_cross_entropy(logits, labels, mask);
  return t.bce_multilabel(logits, targets, mask);
}

template <class S>
TrainReport train_impl(const NodeDataset& ds, const TrainConfig& cfg,
                       SGFormerParams<S>* trained_out = nullptr) {
  ds.validate();
  if (ds.task == TaskKind::SingleLabel && ds.num_classes < 2)
    throw ConfigError("train: need at least two classes");
  if (mask_count(ds.train_mask) == 0) throw ConfigError("train: empty train mask");
  if (cfg.batch_size != 0 && cfg.batch_size < 2)
    throw ConfigError("train: batch_size must be 0 (full) or >= 2");

  using Clock = std::chrono::steady_clock;
  TrainReport report;
  report.config = cfg;

  Mat<double> feats = ds.features;
  if (cfg.row_normalize) row_normalize_features(feats);

  EvalContext<S> eval;
  eval.ds = &ds;
  eval.features = feats.template cast<S>();
  eval.a_hat = normalize_adjacency(ds.graph).template cast<S>();
  if (ds.task == TaskKind::MultiLabel) eval.targets = ds.label_matrix.template cast<S>();
  eval.eval_full_threshold = cfg.eval_full_threshold;
  eval.eval_partition_seed = cfg.eval_partition_seed;
  eval.batch_size = cfg.batch_size;

  const Index out_dim = ds.task == TaskKind::SingleLabel ? ds.num_classes : ds.label_matrix.cols();
  Rng init_rng(cfg.seed);
  SGFormerParams<S> params = SGFormerParams<S>::init(
      ds.feat_dim(), cfg.hidden, out_dim, cfg.num_gcn_layers, cfg.num_attn_layers,
      static_cast<S>(cfg.alpha), static_cast<S>(cfg.beta), static_cast<S>(cfg.dropout), init_rng);
  params.attention_kind = cfg.attention_kind;
  params.attention_self_loop = cfg.attention_self_loop;

  auto trainable = params.trainable();
  AdamState<S> adam(trainable);
  Rng drop_rng(Rng::mix(cfg.seed, 1));
  Rng shuffle_rng(Rng::mix(cfg.seed, 2));
  Rng eval_rng(0);  // inference consumes no draws; placeholder stream

  const std::size_t static_bytes = ds.footprint_bytes() + params.footprint_bytes() +
                                   adam.footprint_bytes() +
                                   sizeof(S) * static_cast<std::size_t>(eval.features.size()) +
                                   eval.a_hat.footprint_bytes();
  std::size_t peak_tape = 0;

  const Index n = ds.num_nodes();
  std::vector<Index> perm(n);
  for (Index i = 0; i < n; ++i) perm[i] = i;

  const auto run_start = Clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    double train_loss = 0.0;

    if (cfg.batch_size == 0) {
      Tape<S> tape;
      auto [logits, vars] = forward_node(tape, eval.features, eval.a_hat, params, drop_rng, true);
      auto loss = loss_node(tape, logits, ds, eval.targets, ds.labels, ds.train_mask);
      train_loss = static_cast<double>(tape.value(loss)(0, 0));
      if (!std::isfinite(train_loss))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
      auto grads = tape.gradients(loss, vars.list());
      adam_step(trainable, grads, adam, static_cast<S>(cfg.lr), static_cast<S>(cfg.weight_decay));
      peak_tape = std::max(peak_tape, tape.peak_bytes());
    } else {
      shuffle_rng.shuffle(perm);
      double loss_weight = 0.0;
      for (Index start = 0; start < n; start += cfg.batch_size) {
        const Index len = std::min(cfg.batch_size, n - start);
        std::vector<Index> batch(perm.begin() + start, perm.begin() + start + len);
        Mask bmask(len, 0);
        Index btrain = 0;
        for (Index i = 0; i < len; ++i) {
          bmask[i] = ds.train_mask[batch[i]];
          btrain += bmask[i];
        }
        if (btrain == 0) continue;  // nothing to learn from in this batch

        SparseGraph<S> sub =
            normalize_adjacency(induced_subgraph(ds.graph, batch)).template cast<S>();
        Mat<S> bx(len, eval.features.cols());
        VecXi by;
        Mat<S> bt;
        if (ds.task == TaskKind::SingleLabel) by.resize(len);
        else bt.resize(len, eval.targets.cols());
        for (Index i = 0; i < len; ++i) {
          bx.row(i) = eval.features.row(batch[i]);
          if (ds.task == TaskKind::SingleLabel) by[i] = ds.labels[batch[i]];
          else bt.row(i) = eval.targets.row(batch[i]);
        }

        Tape<S> tape;
        auto [logits, vars] = forward_node(tape, bx, sub, params, drop_rng, true);
        auto loss = loss_node(tape, logits, ds, bt, by, bmask);
        const double batch_loss = static_cast<double>(tape.value(loss)(0, 0));
        if (!std::isfinite(batch_loss))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
        train_loss += batch_loss * static_cast<double>(btrain);
        loss_weight += static_cast<double>(btrain);
        auto grads = tape.gradients(loss, vars.list());
        adam_step(trainable, grads, adam, static_cast<S>(cfg.lr), static_cast<S>(cfg.weight_decay));
        peak_tape = std::max(peak_tape, tape.peak_bytes());
      }
      if (loss_weight > 0) train_loss /= loss_weight;
    }

    const Mat<S> logits = eval.full_logits(params, eval_rng);
    const double valid = eval.metric(logits, ds.valid_mask);
    const double test = eval.metric(logits, ds.test_mask);
    const auto t1 = Clock::now();

    report.epoch_loss.push_back(train_loss);
    report.epoch_valid.push_back(valid);
    report.epoch_test.push_back(test);
    report.epoch_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  report.total_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - run_start).count();

  if (cfg.epochs == 0) {
    const Mat<S> logits = eval.full_logits(params, eval_rng);
    report.final_valid = eval.metric(logits, ds.valid_mask);
    report.final_test = eval.metric(logits, ds.test_mask);
    report.test_at_best_valid = report.final_test;
    report.best_valid = report.final_valid;
  } else {
    report.final_valid = report.epoch_valid.back();
    report.final_test = report.epoch_test.back();
    report.best_epoch = 0;
    for (int e = 1; e < cfg.epochs; ++e)
      if (report.epoch_valid[e] > report.epoch_valid[report.best_epoch]) report.best_epoch = e;
    report.best_valid = report.epoch_valid[report.best_epoch];
    report.test_at_best_valid = report.epoch_test[report.best_epoch];
  }
  report.peak_accounted_bytes = static_bytes + peak_tape;
  report.peak_rss_bytes = read_peak_rss_bytes();
  if (trained_out) *trained_out = std::move(params);
  return report;
}

}  // namespace detail

template <class S>
TrainReport train_full_batch(const NodeDataset& ds, TrainConfig cfg) {
  cfg.batch_size = 0;
  return detail::train_impl<S>(ds, cfg);
}

template <class S>
TrainReport train_mini_batch(const NodeDataset& ds, const TrainConfig& cfg) {
  if (cfg.batch_size < 2) throw ConfigError("train_mini_batch: batch_size must be >= 2");
  return detail::train_impl<S>(ds, cfg);
}

/// Runs with the configured precision (dispatches the scalar type).
inline TrainReport train(const NodeDataset& ds, const TrainConfig& cfg) {
  return cfg.precision == Precision::F64 ? detail::train_impl<double>(ds, cfg)
                                         : detail::train_impl<float>(ds, cfg);
}

/// Returns the trained parameter set alongside the report, for
/// checkpointing and attention export.
template <class S>
std::pair<TrainReport, SGFormerParams<S>> train_with_params(const NodeDataset& ds,
                                                            const TrainConfig& cfg) {
  SGFormerParams<S> params;
  TrainReport report = detail::train_impl<S>(ds, cfg, &params);
  return {std::move(report), std::move(params)};
}

// ---------------------------------------------------------------------------
// Grid search

struct HyperGrids {
  std::vector<double> lr{0.001, 0.005, 0.01, 0.05, 0.1};
  std::vector<double> weight_decay{1e-5, 1e-4, 5e-4, 1e-3, 1e-2};
  std::vector<Index> hidden{32, 64, 128, 256};
  std::vector<double> dropout{0.0, 0.2, 0.3, 0.5};
  std::vector<int> gcn_layers{1, 2, 3};
  std::vector<double> alpha{0.5, 0.8};
};

struct GridResult {
  TrainConfig best_config;
  double best_valid = 0.0;
  std::vector<TrainReport> seed_reports;  // best config rerun over seeds
  double mean_test = 0.0, std_test = 0.0;
  std::size_t evaluated = 0;
};

/// Evaluates the Cartesian product (optionally capped at `budget` configs in
/// enumeration order), selects by validation metric (ties keep the earlier
/// config), then reruns the winner over `num_seeds` seeds. Configurations are
/// independent (each owns its rng streams), so they may run on `jobs`
/// threads; results merge by config order, keeping selection deterministic.
inline GridResult grid_search(const NodeDataset& ds, const HyperGrids& grids,
                              const TrainConfig& base, std::size_t budget = 0,
                              int num_seeds = 5, int jobs = 1) {
  if (grids.lr.empty() || grids.weight_decay.empty() || grids.hidden.empty() ||
      grids.dropout.empty() || grids.gcn_layers.empty() || grids.alpha.empty())
    throw ConfigError("grid_search: empty grid dimension");

  std::vector<TrainConfig> configs;
  for (double lr : grids.lr)
    for (double wd : grids.weight_decay)
      for (Index h : grids.hidden)
        for (double dr : grids.dropout)
          for (int gl : grids.gcn_layers)
            for (double al : grids.alpha) {
              TrainConfig c = base;
              c.lr = lr;
              c.weight_decay = wd;
              c.hidden = h;
              c.dropout = dr;
              c.num_gcn_layers = gl;
              c.alpha = al;
              configs.push_back(c);
            }
  if (budget > 0 && configs.size() > budget) configs.resize(budget);

  GridResult out;
  out.evaluated = configs.size();
  std::vector<double> valid_of(configs.size(), 0.0);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < configs.size(); ++i) valid_of[i] = train(ds, configs[i]).best_valid;
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (std::size_t i = next.fetch_add(1); i < configs.size(); i = next.fetch_add(1))
        valid_of[i] = train(ds, configs[i]).best_valid;
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::size_t best_idx = 0;
  for (std::size_t i = 1; i < configs.size(); ++i)
    if (valid_of[i] > valid_of[best_idx]) best_idx = i;
  out.best_valid = valid_of[best_idx];
  out.best_config = configs[best_idx];

  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < num_seeds; ++s) {
    TrainConfig c = out.best_config;
    c.seed = base.seed + static_cast<std::uint64_t>(s);
    TrainReport r = train(ds, c);
    sum += r.test_at_best_valid;
    sum_sq += r.test_at_best_valid * r.test_at_best_valid;
    out.seed_reports.push_back(std::move(r));
  }
  out.mean_test = sum / num_seeds;
  const double var = std::max(0.0, sum_sq / num_seeds - out.mean_test * out.mean_test);
  out.std_test = std::sqrt(var);
  return out;
}

}  // namespace sgf
