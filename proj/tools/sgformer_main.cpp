#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgformer/sgformer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("SGF_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

std::string default_data_dir() {
  if (const char* env = std::getenv("SGF_DATA_DIR")) return env;
  return "data";
}

struct DatasetArgs {
  std::string dataset;
  std::string data_dir = default_data_dir();
  std::string split = "per-class";
  std::uint64_t split_seed = 0;
  sgf::Index per_class = 20, valid_count = 500, test_count = 1000;
  double train_ratio = 0.5, valid_ratio = 0.25, test_ratio = 0.25;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset,
                    "cora-raw | citeseer-raw | pubmed-raw | path to a generic dataset dir")
        ->required();
    cmd->add_option("--data-dir", data_dir, "root for the *-raw datasets (env SGF_DATA_DIR)");
    cmd->add_option("--split", split, "per-class | ratio | files (use splits shipped with the data)");
    cmd->add_option("--split-seed", split_seed, "rng seed for drawing the split");
    cmd->add_option("--per-class", per_class, "training nodes per class (per-class split)");
    cmd->add_option("--valid-count", valid_count, "validation nodes (per-class split)");
    cmd->add_option("--test-count", test_count, "test nodes (per-class split)");
    cmd->add_option("--train-ratio", train_ratio);
    cmd->add_option("--valid-ratio", valid_ratio);
    cmd->add_option("--test-ratio", test_ratio);
  }

  sgf::NodeDataset load() const {
    sgf::NodeDataset ds;
    bool raw = false;
    for (const char* name : {"cora", "citeseer", "pubmed"}) {
      if (dataset == std::string(name) + "-raw") {
        const fs::path base = fs::path(data_dir) / name;
        ds = sgf::load_planetoid_raw((base / (std::string(name) + ".content")).string(),
                                     (base / (std::string(name) + ".cites")).string());
        raw = true;
        break;
      }
    }
    if (!raw) ds = sgf::load_generic(dataset);

    const bool has_split = !ds.train_mask.empty();
    if (split == "files") {
      if (!has_split) throw sgf::ConfigError("--split files: dataset ships no split files");
      return ds;
    }
    sgf::Rng rng(split_seed);
    sgf::SplitSpec spec = (split == "ratio")
                              ? sgf::SplitSpec::ratio(train_ratio, valid_ratio, test_ratio)
                              : sgf::SplitSpec::per_class_count(per_class, valid_count, test_count);
    auto masks = sgf::make_split(ds, spec, rng);
    ds.train_mask = std::move(masks.train);
    ds.valid_mask = std::move(masks.valid);
    ds.test_mask = std::move(masks.test);
    return ds;
  }

  json to_json() const {
    return {{"dataset", dataset}, {"data_dir", data_dir},   {"split", split},
            {"split_seed", split_seed}, {"per_class", per_class}, {"valid_count", valid_count},
            {"test_count", test_count}};
  }
};

struct TrainArgs {
  sgf::TrainConfig cfg;
  std::string precision = "f64";
  std::string attention = "linear";
  bool no_self_loop = false;
  bool no_row_normalize = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", cfg.lr, "learning rate");
    cmd->add_option("--weight-decay", cfg.weight_decay);
    cmd->add_option("--hidden", cfg.hidden, "hidden size");
    cmd->add_option("--dropout", cfg.dropout);
    cmd->add_option("--gcn-layers", cfg.num_gcn_layers)->check(CLI::Range(1, 3));
    cmd->add_option("--attn-layers", cfg.num_attn_layers)->check(CLI::PositiveNumber);
    cmd->add_option("--alpha", cfg.alpha)->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--beta", cfg.beta);
    cmd->add_option("--epochs", cfg.epochs);
    cmd->add_option("--batch-size", cfg.batch_size, "0 = full batch");
    cmd->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--attention", attention)->check(CLI::IsMember({"linear", "softmax"}));
    cmd->add_flag("--no-self-loop", no_self_loop, "drop the attention residual (ablation)");
    cmd->add_flag("--no-row-normalize", no_row_normalize, "keep raw feature rows");
  }

  sgf::TrainConfig resolve(std::uint64_t seed) const {
    sgf::TrainConfig out = cfg;
    out.seed = seed;
    out.precision = precision == "f64" ? sgf::Precision::F64 : sgf::Precision::F32;
    out.attention_kind =
        attention == "linear" ? sgf::AttentionKind::Linear : sgf::AttentionKind::SoftmaxDense;
    out.attention_self_loop = !no_self_loop;
    out.row_normalize = !no_row_normalize;
    return out;
  }
};

void write_run_json(const std::string& out_dir, const std::string& subcommand, const json& resolved) {
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "run.json");
  if (!os) throw sgf::IoError("cannot write run.json under " + out_dir);
  json j = {{"subcommand", subcommand}, {"config", resolved}};
  os << j.dump(2) << '\n';
}

int run_train(const DatasetArgs& data, const TrainArgs& targs, const std::string& out_dir,
              std::uint64_t seed, int num_seeds) {
  sgf::NodeDataset ds = data.load();
  sgf::TrainConfig base = targs.resolve(seed);
  write_run_json(out_dir, "train",
                 {{"dataset", data.to_json()}, {"train", base.to_json()}, {"seeds", num_seeds}});

  std::vector<double> tests;
  for (int s = 0; s < num_seeds; ++s) {
    sgf::TrainConfig cfg = base;
    cfg.seed = seed + static_cast<std::uint64_t>(s);
    sgf::TrainReport report;
    const std::string tag = "_seed" + std::to_string(cfg.seed);
    if (cfg.precision == sgf::Precision::F64) {
      auto [rep, params] = sgf::train_with_params<double>(ds, cfg);
      report = std::move(rep);
      sgf::save_checkpoint((fs::path(out_dir) / ("checkpoint" + tag + ".bin")).string(), params);
    } else {
      auto [rep, params] = sgf::train_with_params<float>(ds, cfg);
      report = std::move(rep);
      sgf::save_checkpoint((fs::path(out_dir) / ("checkpoint" + tag + ".bin")).string(), params);
    }
    {
      std::ofstream os(fs::path(out_dir) / ("report" + tag + ".json"));
      os << report.to_json().dump(2) << '\n';
    }
    {
      std::ofstream os(fs::path(out_dir) / ("history" + tag + ".csv"));
      report.write_history_csv(os);
    }
    std::cout << "seed " << cfg.seed << ": test@best-valid = " << report.test_at_best_valid
              << " (best epoch " << report.best_epoch << ", valid " << report.best_valid << ")\n";
    tests.push_back(report.test_at_best_valid);
  }
  double mean = 0, sq = 0;
  for (double t : tests) mean += t;
  mean /= tests.size();
  for (double t : tests) sq += (t - mean) * (t - mean);
  const double stddev = std::sqrt(sq / tests.size());
  std::cout << "test@best-valid mean ± std: " << mean << " ± " << stddev << " over "
            << tests.size() << " seed(s)\n";
  return 0;
}

int run_eval(const DatasetArgs& data, const std::string& checkpoint, const std::string& out_dir) {
  sgf::NodeDataset ds = data.load();
  auto params = sgf::load_checkpoint<double>(checkpoint);
  write_run_json(out_dir, "eval", {{"dataset", data.to_json()}, {"checkpoint", checkpoint}});

  sgf::Mat<double> feats = ds.features;
  sgf::row_normalize_features(feats);
  auto a_hat = sgf::normalize_adjacency(ds.graph);
  sgf::Rng rng(0);
  auto outp = sgf::forward(feats, a_hat, params, rng, false);
  auto metric = [&](const sgf::Mask& mask, const char* name) {
    if (sgf::mask_count(mask) == 0) return;
    double m = ds.task == sgf::TaskKind::SingleLabel
                   ? sgf::metric_accuracy(sgf::predict_classes(outp.logits), ds.labels, mask)
                   : sgf::metric_rocauc(outp.logits, ds.label_matrix, mask);
    std::cout << name << ": " << m << '\n';
  };
  metric(ds.train_mask, "train");
  metric(ds.valid_mask, "valid");
  metric(ds.test_mask, "test");
  return 0;
}

int run_grid(const DatasetArgs& data, const TrainArgs& targs, sgf::HyperGrids grids,
             const std::string& out_dir, std::uint64_t seed, std::size_t budget, int jobs) {
  sgf::NodeDataset ds = data.load();
  sgf::TrainConfig base = targs.resolve(seed);
  write_run_json(out_dir, "grid",
                 {{"dataset", data.to_json()}, {"train", base.to_json()}, {"budget", budget},
                  {"jobs", jobs}});

  sgf::GridResult res = sgf::grid_search(ds, grids, base, budget, 5, jobs);
  json j = {{"evaluated", res.evaluated},
            {"best_config", res.best_config.to_json()},
            {"best_valid", res.best_valid},
            {"mean_test", res.mean_test},
            {"std_test", res.std_test}};
  std::ofstream os(fs::path(out_dir) / "grid.json");
  os << j.dump(2) << '\n';
  std::cout << "evaluated " << res.evaluated << " configs; best valid " << res.best_valid << '\n'
            << "test@best-valid mean ± std: " << res.mean_test << " ± " << res.std_test << '\n';
  return 0;
}

int run_bench(sgf::BenchConfig bc, const std::string& variants, const std::string& out_dir) {
  write_run_json(out_dir, "bench-scaling",
                 {{"sizes", bc.sizes}, {"softmax_sizes", bc.softmax_sizes},
                  {"hidden", bc.hidden}, {"variants", variants}});
  const bool linear = variants == "both" || variants == "linear";
  const bool softmax = variants == "both" || variants == "softmax-dense";
  auto results = sgf::bench_scaling(bc, linear, softmax);
  auto fits = sgf::fit_complexity(results);
  {
    std::ofstream os(fs::path(out_dir) / "bench.csv");
    sgf::write_bench_csv(os, results);
  }
  {
    std::ofstream os(fs::path(out_dir) / "bench.json");
    os << sgf::bench_summary_json(results, fits).dump(2) << '\n';
  }
  for (const auto& r : results) {
    if (r.skipped) {
      std::cout << r.variant << " N=" << r.n << ": skipped (" << r.skip_reason << ")\n";
    } else {
      std::cout << r.variant << " N=" << r.n << " E=" << r.e << ": " << r.ms_mean << " ± "
                << r.ms_std << " ms/epoch, " << r.mem_bytes << " bytes accounted\n";
    }
  }
  for (const auto& f : fits)
    std::cout << f.variant << ": fitted exponent " << f.exponent << " (R^2 " << f.r2 << ")\n";
  return 0;
}

int run_verify(const std::vector<int>& ks, sgf::Index n, int instances, std::uint64_t seed) {
  sgf::Rng rng(seed);
  bool ok = true;
  std::cout << "theorem  K    N      discrepancy   verdict\n";

  double worst1 = 0.0;
  for (int i = 0; i < instances; ++i) {
    const sgf::Index ni = 2 + static_cast<sgf::Index>(rng.uniform_int(n - 1));
    const sgf::Index d = 1 + static_cast<sgf::Index>(rng.uniform_int(16));
    auto c = sgf::random_row_stochastic(ni, rng);
    sgf::Mat<double> z(ni, d);
    for (sgf::Index r = 0; r < ni; ++r)
      for (sgf::Index cc = 0; cc < d; ++cc) z(r, cc) = rng.normal();
    const double tau = rng.uniform(0.05, 1.0);
    const double lambda = rng.uniform(0.5, 2.0);
    worst1 = std::max(worst1, sgf::verify_theorem1(z, c, tau, lambda));
  }
  const bool pass1 = worst1 < 1e-10;
  ok = ok && pass1;
  std::cout << "1        1    <=" << n << "   " << worst1 << "   " << (pass1 ? "pass" : "FAIL")
            << '\n';

  for (int k : ks) {
    const double tol = 1e-8;
    double worst = 0.0;
    for (int i = 0; i < std::max(1, instances / 10); ++i) {
      const sgf::Index ni = 2 + static_cast<sgf::Index>(rng.uniform_int(n - 1));
      worst = std::max(worst, sgf::verify_theorem2(k, ni, 8, rng));
    }
    const bool pass = worst < tol;
    ok = ok && pass;
    std::cout << "2        " << k << "    <=" << n << "   " << worst << "   "
              << (pass ? "pass" : "FAIL") << '\n';
  }
  return ok ? 0 : 1;
}

int run_export_attention(const DatasetArgs& data, const std::string& checkpoint,
                         const std::string& out_dir, std::uint64_t seed, sgf::Index hidden) {
  sgf::NodeDataset ds = data.load();
  write_run_json(out_dir, "export-attention",
                 {{"dataset", data.to_json()}, {"checkpoint", checkpoint}, {"seed", seed}});
  if (ds.num_nodes() > sgf::kDenseAttentionGuard)
    throw sgf::SizeError("export-attention: dataset exceeds the dense materialization guard");

  sgf::SGFormerParams<double> params;
  if (!checkpoint.empty()) {
    params = sgf::load_checkpoint<double>(checkpoint);
  } else {
    sgf::Rng rng(seed);
    const sgf::Index out_dim = ds.task == sgf::TaskKind::SingleLabel ? ds.num_classes
                                                                     : ds.label_matrix.cols();
    params = sgf::SGFormerParams<double>::init(ds.feat_dim(), hidden, out_dim, 1, 1, 0.5, 0.5,
                                               0.0, rng);
  }
  sgf::Mat<double> feats = ds.features;
  sgf::row_normalize_features(feats);
  sgf::Rng rng(0);
  sgf::Mat<double> z0 = sgf::relu(
      sgf::Mat<double>((feats * params.w_in).rowwise() + params.b_in.row(0)));
  auto out = sgf::dense_attention_oracle(z0, params.attention.at(0));
  std::ofstream os(fs::path(out_dir) / "attention.csv");
  if (!os) throw sgf::IoError("cannot write attention.csv under " + out_dir);
  sgf::export_attention_csv(os, out.c);
  std::cout << "wrote " << (fs::path(out_dir) / "attention.csv").string() << " (" << out.c.rows()
            << "x" << out.c.cols() << ")\n";
  return 0;
}

int run_gen_sbm(sgf::Index n, int blocks, double p_in, double p_out, sgf::Index feat_dim,
                double noise, std::uint64_t seed, bool with_split, const std::string& out_dir) {
  sgf::Rng rng(seed);
  sgf::NodeDataset ds = sgf::generate_sbm(n, blocks, p_in, p_out, feat_dim, rng, noise);
  if (with_split) {
    auto masks = sgf::make_split(ds, sgf::SplitSpec::ratio(0.5, 0.25, 0.25), rng);
    ds.train_mask = std::move(masks.train);
    ds.valid_mask = std::move(masks.valid);
    ds.test_mask = std::move(masks.test);
  }
  sgf::save_generic(out_dir, ds);
  write_run_json(out_dir, "gen-sbm",
                 {{"n", n}, {"blocks", blocks}, {"p_in", p_in}, {"p_out", p_out},
                  {"feat_dim", feat_dim}, {"noise", noise}, {"seed", seed}});
  std::cout << "wrote SBM dataset (" << n << " nodes, " << ds.graph.num_undirected_edges()
            << " edges) to " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGFormer: simplified graph transformer for node classification"};
  app.require_subcommand(1);

  std::uint64_t seed = default_seed();
  std::string out_dir = "out";
  app.add_option("--seed", seed, "base rng seed (env SGF_SEED)")->capture_default_str();
  app.add_option("--out", out_dir, "output directory")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train and evaluate over a seed list");
  DatasetArgs train_data;
  TrainArgs train_args;
  int num_seeds = 1;
  train_data.attach(train_cmd);
  train_args.attach(train_cmd);
  train_cmd->add_option("--seeds", num_seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  DatasetArgs eval_data;
  std::string eval_checkpoint;
  eval_data.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_checkpoint)->required();

  // grid
  auto* grid_cmd = app.add_subcommand("grid", "hyper-parameter grid search");
  DatasetArgs grid_data;
  TrainArgs grid_args;
  sgf::HyperGrids grids;
  std::size_t budget = 0;
  int jobs = 1;
  grid_data.attach(grid_cmd);
  grid_args.attach(grid_cmd);
  grid_cmd->add_option("--budget", budget, "max configurations (0 = all)");
  grid_cmd->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);
  grid_cmd->add_option("--grid-lr", grids.lr, "learning-rate grid")->delimiter(',');
  grid_cmd->add_option("--grid-wd", grids.weight_decay, "weight-decay grid")->delimiter(',');
  grid_cmd->add_option("--grid-hidden", grids.hidden, "hidden-size grid")->delimiter(',');
  grid_cmd->add_option("--grid-dropout", grids.dropout, "dropout grid")->delimiter(',');
  grid_cmd->add_option("--grid-gcn-layers", grids.gcn_layers, "GCN depth grid")->delimiter(',');
  grid_cmd->add_option("--grid-alpha", grids.alpha, "fusion weight grid")->delimiter(',');

  // bench-scaling
  auto* bench_cmd = app.add_subcommand("bench-scaling", "epoch time/memory vs graph size");
  sgf::BenchConfig bench_cfg;
  std::string variants = "both";
  bench_cmd->add_option("--sizes", bench_cfg.sizes, "linear-attention sizes")->delimiter(',');
  bench_cmd->add_option("--softmax-sizes", bench_cfg.softmax_sizes, "softmax-dense sizes")
      ->delimiter(',');
  bench_cmd->add_option("--variants", variants)->check(CLI::IsMember({"both", "linear", "softmax-dense"}));
  bench_cmd->add_option("--hidden", bench_cfg.hidden);
  bench_cmd->add_option("--feat-dim", bench_cfg.feat_dim);
  bench_cmd->add_option("--blocks", bench_cfg.blocks);
  bench_cmd->add_option("--warmup", bench_cfg.warmup_epochs);
  bench_cmd->add_option("--epochs", bench_cfg.measured_epochs, "measured epochs");
  std::string bench_precision = "f32";
  bench_cmd->add_option("--precision", bench_precision)->check(CLI::IsMember({"f32", "f64"}));

  // verify-theory
  auto* verify_cmd = app.add_subcommand("verify-theory", "numerical theorem checks");
  std::vector<int> verify_k{1, 2, 4, 8};
  sgf::Index verify_n = 200;
  int verify_instances = 100;
  verify_cmd->add_option("--k", verify_k, "layer counts for the collapse check")->delimiter(',');
  verify_cmd->add_option("--n", verify_n, "max node count per instance");
  verify_cmd->add_option("--instances", verify_instances);

  // export-attention
  auto* export_cmd = app.add_subcommand("export-attention", "dense attention coefficients as CSV");
  DatasetArgs export_data;
  std::string export_checkpoint;
  sgf::Index export_hidden = 64;
  export_data.attach(export_cmd);
  export_cmd->add_option("--checkpoint", export_checkpoint, "trained model (fresh init if absent)");
  export_cmd->add_option("--hidden", export_hidden, "hidden size when no checkpoint is given");

  // gen-sbm
  auto* gen_cmd = app.add_subcommand("gen-sbm", "write a synthetic SBM dataset");
  sgf::Index gen_n = 1000, gen_feat = 32;
  int gen_blocks = 4;
  double gen_p_in = 0.02, gen_p_out = 0.002, gen_noise = 1.0;
  bool gen_split = false;
  gen_cmd->add_option("--n", gen_n)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--blocks", gen_blocks)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--p-in", gen_p_in);
  gen_cmd->add_option("--p-out", gen_p_out);
  gen_cmd->add_option("--feat-dim", gen_feat);
  gen_cmd->add_option("--noise", gen_noise);
  gen_cmd->add_flag("--with-split", gen_split, "include a 50/25/25 ratio split");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (*train_cmd) return run_train(train_data, train_args, out_dir, seed, num_seeds);
    if (*eval_cmd) return run_eval(eval_data, eval_checkpoint, out_dir);
    if (*grid_cmd) return run_grid(grid_data, grid_args, grids, out_dir, seed, budget, jobs);
    if (*bench_cmd) {
      bench_cfg.seed = seed;
      bench_cfg.precision =
          bench_precision == "f64" ? sgf::Precision::F64 : sgf::Precision::F32;
      return run_bench(bench_cfg, variants, out_dir);
    }
    if (*verify_cmd) return run_verify(verify_k, verify_n, verify_instances, seed);
    if (*export_cmd)
      return run_export_attention(export_data, export_checkpoint, out_dir, seed, export_hidden);
    if (*gen_cmd)
      return run_gen_sbm(gen_n, gen_blocks, gen_p_in, gen_p_out, gen_feat, gen_noise, seed,
                         gen_split, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
