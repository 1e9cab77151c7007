#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "sgformer/dataset.hpp"
#include "sgformer/graph.hpp"
#include "sgformer/io.hpp"

using sgf::Index;
using sgf::Mat;
using sgf::Rng;
using sgf::SparseGraph;

namespace fs = std::filesystem;

namespace {

SparseGraph<double> random_graph(Index n, double p, Rng& rng) {
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < n; ++u)
    for (Index v = u + 1; v < n; ++v)
      if (rng.uniform() < p) edges.emplace_back(u, v);
  return sgf::graph_from_edges<double>(n, edges);
}

double power_iteration_radius(const Mat<double>& a, int iters = 200) {
  sgf::Vec<double> x = sgf::Vec<double>::Ones(a.rows());
  x /= x.norm();
  double lambda = 0;
  for (int i = 0; i < iters; ++i) {
    sgf::Vec<double> y = a * x;
    lambda = y.norm();
    if (lambda == 0) return 0;
    x = y / lambda;
  }
  return lambda;
}

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("sgf_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool datasets_equal(const sgf::NodeDataset& a, const sgf::NodeDataset& b) {
  if (a.num_nodes() != b.num_nodes() || a.num_classes != b.num_classes || a.task != b.task)
    return false;
  if (a.graph.row_ptr != b.graph.row_ptr || a.graph.col_idx != b.graph.col_idx) return false;
  if ((a.features - b.features).cwiseAbs().maxCoeff() > 1e-12) return false;
  if (a.task == sgf::TaskKind::SingleLabel && a.labels != b.labels) return false;
  return a.train_mask == b.train_mask && a.valid_mask == b.valid_mask && a.test_mask == b.test_mask;
}

}  // namespace

TEST_CASE("edge list construction symmetrizes and deduplicates") {
  auto g = sgf::graph_from_edges<double>(3, {{0, 1}, {1, 0}, {0, 1}, {2, 2}});
  CHECK(g.nnz() == 2);  // (0,1) and (1,0); self-loop dropped
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(1, 0));
  CHECK(!g.has_edge(2, 2));
  CHECK(g.num_undirected_edges() == 1);
}

TEST_CASE("CSR round-trips through dense exactly") {
  Rng rng(4);
  for (Index n : {1, 7, 50, 200}) {
    auto g = random_graph(n, 0.1, rng);
    auto back = sgf::graph_from_dense(g.to_dense());
    CHECK(back.row_ptr == g.row_ptr);
    CHECK(back.col_idx == g.col_idx);
    CHECK(back.edge_val == g.edge_val);
  }
}

TEST_CASE("normalize_adjacency hand cases") {
  SUBCASE("two nodes, one edge") {
    auto g = sgf::graph_from_edges<double>(2, {{0, 1}});
    Mat<double> a = sgf::normalize_adjacency(g, true).to_dense();
    Mat<double> expect(2, 2);
    expect << 0.5, 0.5, 0.5, 0.5;
    CHECK((a - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("single isolated node") {
    auto g = sgf::graph_from_edges<double>(1, {});
    Mat<double> a = sgf::normalize_adjacency(g, true).to_dense();
    CHECK(a.rows() == 1);
    CHECK(a(0, 0) == 1.0);
  }
}

TEST_CASE("normalize_adjacency matches the dense oracle") {
  Rng rng(9);
  auto g = random_graph(10, 0.4, rng);
  Mat<double> a = g.to_dense();
  Mat<double> ai = a + Mat<double>::Identity(10, 10);
  sgf::Vec<double> deg = ai.rowwise().sum();
  Mat<double> expect(10, 10);
  for (Index u = 0; u < 10; ++u)
    for (Index v = 0; v < 10; ++v) expect(u, v) = ai(u, v) / std::sqrt(deg(u) * deg(v));

  Mat<double> got = sgf::normalize_adjacency(g, true).to_dense();
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((got - got.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("normalized adjacency spectral radius stays at or below one") {
  Rng rng(12);
  for (int t = 0; t < 10; ++t) {
    auto g = random_graph(12 + 3 * t, 0.3, rng);
    const double radius = power_iteration_radius(sgf::normalize_adjacency(g, true).to_dense());
    CHECK(radius <= 1.0 + 1e-9);
  }
}

TEST_CASE("spmm basics and dense oracle") {
  Rng rng(21);
  SUBCASE("identity graph leaves the matrix unchanged") {
    SparseGraph<double> eye;
    eye.num_nodes = 4;
    eye.row_ptr = {0, 1, 2, 3, 4};
    eye.col_idx = {0, 1, 2, 3};
    eye.edge_val = {1, 1, 1, 1};
    Mat<double> z(4, 2);
    z << 1, 2, 3, 4, 5, 6, 7, 8;
    CHECK(sgf::spmm(eye, z) == z);
  }
  SUBCASE("empty graph maps to zero") {
    auto g = sgf::graph_from_edges<double>(3, {});
    Mat<double> z = Mat<double>::Constant(3, 2, 5.0);
    CHECK(sgf::spmm(g, z) == Mat<double>(Mat<double>::Zero(3, 2)));
  }
  SUBCASE("random 100x100 agrees with the dense product") {
    auto g = random_graph(100, 0.05, rng);
    auto a_hat = sgf::normalize_adjacency(g, true);
    Mat<double> z(100, 8);
    for (Index i = 0; i < 100; ++i)
      for (Index j = 0; j < 8; ++j) z(i, j) = rng.normal();
    Mat<double> expect = a_hat.to_dense() * z;
    CHECK((sgf::spmm(a_hat, z) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("induced subgraph equals brute-force pair filtering") {
  Rng rng(31);
  auto g = random_graph(50, 0.15, rng);
  std::vector<Index> nodes{4, 9, 11, 17, 23, 30, 31, 44, 45, 49};
  auto sub = sgf::induced_subgraph(g, nodes);
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      const bool expect = i != j && g.has_edge(nodes[i], nodes[j]);
      CHECK(sub.has_edge(static_cast<Index>(i), static_cast<Index>(j)) == expect);
    }
}

TEST_CASE("subsample_nodes") {
  Rng rng(8);
  auto ds = sgf::generate_sbm(40, 4, 0.5, 0.05, 6, rng);
  SUBCASE("n = N keeps the dataset up to permutation") {
    Rng r2(1);
    auto sub = sgf::subsample_nodes(ds, 40, r2);
    CHECK(sub.num_nodes() == 40);
    CHECK(sub.graph.num_undirected_edges() == ds.graph.num_undirected_edges());
    std::multiset<int> a(ds.labels.begin(), ds.labels.end());
    std::multiset<int> b(sub.labels.begin(), sub.labels.end());
    CHECK(a == b);
  }
  SUBCASE("n = 1 yields a single node without edges") {
    Rng r2(2);
    auto sub = sgf::subsample_nodes(ds, 1, r2);
    CHECK(sub.num_nodes() == 1);
    CHECK(sub.graph.nnz() == 0);
  }
  SUBCASE("oversampling is a config error") {
    Rng r2(3);
    CHECK_THROWS_AS(sgf::subsample_nodes(ds, 41, r2), sgf::ConfigError);
  }
}

TEST_CASE("make_split ratio and per-class sizes") {
  Rng rng(5);
  auto ds = sgf::generate_sbm(100, 4, 0.3, 0.02, 4, rng);

  SUBCASE("ratio 50/25/25 on N=100") {
    Rng r2(7);
    auto m = sgf::make_split(ds, sgf::SplitSpec::ratio(0.5, 0.25, 0.25), r2);
    CHECK(sgf::mask_count(m.train) == 50);
    CHECK(sgf::mask_count(m.valid) == 25);
    CHECK(sgf::mask_count(m.test) == 25);
  }
  SUBCASE("per-class count") {
    Rng r2(7);
    auto m = sgf::make_split(ds, sgf::SplitSpec::per_class_count(5, 20, 30), r2);
    CHECK(sgf::mask_count(m.train) == 20);  // 4 classes x 5
    CHECK(sgf::mask_count(m.valid) == 20);
    CHECK(sgf::mask_count(m.test) == 30);
    std::vector<int> per_class(4, 0);
    for (Index i = 0; i < 100; ++i)
      if (m.train[i]) ++per_class[ds.labels[i]];
    for (int c = 0; c < 4; ++c) CHECK(per_class[c] == 5);
  }
  SUBCASE("infeasible request is a config error") {
    Rng r2(7);
    CHECK_THROWS_AS(sgf::make_split(ds, sgf::SplitSpec::per_class_count(40, 10, 10), r2),
                    sgf::ConfigError);
    CHECK_THROWS_AS(sgf::make_split(ds, sgf::SplitSpec::per_class_count(5, 90, 20), r2),
                    sgf::ConfigError);
  }
}

TEST_CASE("make_split masks stay disjoint over 100 seeded draws") {
  Rng rng(5);
  auto ds = sgf::generate_sbm(60, 3, 0.3, 0.05, 4, rng);
  for (int s = 0; s < 100; ++s) {
    Rng r2(1000 + s);
    auto m = sgf::make_split(ds, sgf::SplitSpec::per_class_count(4, 15, 20), r2);
    for (Index i = 0; i < 60; ++i) CHECK(m.train[i] + m.valid[i] + m.test[i] <= 1);
    CHECK(sgf::mask_count(m.train) + sgf::mask_count(m.valid) + sgf::mask_count(m.test) ==
          12 + 15 + 20);
  }
}

TEST_CASE("generate_sbm extremes and moments") {
  SUBCASE("p_in=1, p_out=0 gives two disjoint cliques") {
    Rng rng(3);
    auto ds = sgf::generate_sbm(4, 2, 1.0, 0.0, 3, rng);
    CHECK(ds.graph.num_undirected_edges() == 2);
    CHECK(ds.graph.has_edge(0, 1));
    CHECK(ds.graph.has_edge(2, 3));
    CHECK(!ds.graph.has_edge(0, 2));
    CHECK(!ds.graph.has_edge(1, 3));
    CHECK(ds.labels[0] == 0);
    CHECK(ds.labels[3] == 1);
  }
  SUBCASE("edge count sits within the binomial band") {
    const Index n = 400;
    const int blocks = 4;
    const double p_in = 0.05, p_out = 0.01;
    // contiguous equal blocks of 100
    const double within_pairs = blocks * (100.0 * 99.0 / 2.0);
    const double total_pairs = n * (n - 1.0) / 2.0;
    const double cross_pairs = total_pairs - within_pairs;
    const double mean = within_pairs * p_in + cross_pairs * p_out;
    const double var = within_pairs * p_in * (1 - p_in) + cross_pairs * p_out * (1 - p_out);
    const double sigma = std::sqrt(var);
    double sum = 0;
    const int reps = 5;
    for (int r = 0; r < reps; ++r) {
      Rng rng(50 + r);
      auto ds = sgf::generate_sbm(n, blocks, p_in, p_out, 3, rng);
      sum += static_cast<double>(ds.graph.num_undirected_edges());
      CHECK(std::abs(static_cast<double>(ds.graph.num_undirected_edges()) - mean) < 4 * sigma);
    }
    CHECK(std::abs(sum / reps - mean) < 3 * sigma / std::sqrt(static_cast<double>(reps)));
  }
  SUBCASE("n=10000 generates quickly") {
    Rng rng(77);
    const auto t0 = std::chrono::steady_clock::now();
    auto ds = sgf::generate_sbm(10000, 4, 0.004, 0.0005, 8, rng);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(ds.num_nodes() == 10000);
    CHECK(secs < 5.0);
  }
  SUBCASE("invalid probabilities are config errors") {
    Rng rng(1);
    CHECK_THROWS_AS(sgf::generate_sbm(10, 2, 0.1, 0.5, 3, rng), sgf::ConfigError);
    CHECK_THROWS_AS(sgf::generate_sbm(10, 2, 1.5, 0.1, 3, rng), sgf::ConfigError);
  }
}

TEST_CASE("planetoid raw loader") {
  const fs::path dir = temp_dir("planetoid");
  const auto content = dir / "toy.content";
  const auto cites = dir / "toy.cites";

  SUBCASE("two-line content and one cite line") {
    std::ofstream(content) << "n1 1 0 1 labelA\n"
                           << "n2 0 1 0 labelB\n";
    std::ofstream(cites) << "n1 n2\n";
    sgf::LoadStats stats;
    auto ds = sgf::load_planetoid_raw(content.string(), cites.string(), &stats);
    CHECK(ds.num_nodes() == 2);
    CHECK(ds.feat_dim() == 3);
    CHECK(ds.num_classes == 2);
    CHECK(ds.graph.nnz() == 2);  // one undirected edge, two directed entries
    CHECK(ds.labels[0] == 0);    // first-appearance order
    CHECK(ds.labels[1] == 1);
    CHECK(stats.skipped_cites == 0);
  }
  SUBCASE("unknown cite ids are skipped and counted") {
    std::ofstream(content) << "a 1 0 x\n"
                           << "b 0 1 y\n";
    std::ofstream(cites) << "a b\nc a\nb ghost\n";
    sgf::LoadStats stats;
    auto ds = sgf::load_planetoid_raw(content.string(), cites.string(), &stats);
    CHECK(ds.graph.num_undirected_edges() == 1);
    CHECK(stats.skipped_cites == 2);
  }
  SUBCASE("inconsistent feature width is a format error") {
    std::ofstream(content) << "a 1 0 x\n"
                           << "b 0 1 1 y\n";
    std::ofstream(cites) << "a b\n";
    CHECK_THROWS_AS(sgf::load_planetoid_raw(content.string(), cites.string()), sgf::FormatError);
  }
  SUBCASE("empty content file is a format error") {
    std::ofstream(content) << "";
    std::ofstream(cites) << "a b\n";
    CHECK_THROWS_AS(sgf::load_planetoid_raw(content.string(), cites.string()), sgf::FormatError);
  }
  SUBCASE("duplicate and reverse cite lines collapse to one edge") {
    std::ofstream(content) << "a 1 0 x\nb 0 1 y\nc 1 1 x\n";
    std::ofstream(cites) << "a b\nb a\na b\nc c\n";
    auto ds = sgf::load_planetoid_raw(content.string(), cites.string());
    CHECK(ds.graph.num_undirected_edges() == 1);  // self-loop dropped too
  }
}

TEST_CASE("generic loader round-trips") {
  SUBCASE("minimal three-node dataset, no split files") {
    auto dir = temp_dir("generic");
    std::ofstream(dir / "meta.json")
        << R"({"num_nodes":3,"feat_dim":2,"num_classes":2,"task":"single-label"})";
    std::ofstream(dir / "edges.txt") << "0 1\n1 2\n";
    std::ofstream(dir / "features.csv") << "1,0\n0,1\n1,1\n";
    std::ofstream(dir / "labels.csv") << "0\n1\n0\n";
    auto ds = sgf::load_generic(dir.string());
    CHECK(ds.num_nodes() == 3);
    CHECK(ds.train_mask.empty());
    CHECK(ds.graph.num_undirected_edges() == 2);
    CHECK(ds.graph.has_edge(1, 0));  // symmetrized

    auto out = temp_dir("generic_rt");
    sgf::save_generic(out.string(), ds);
    auto again = sgf::load_generic(out.string());
    CHECK(datasets_equal(ds, again));
  }
  SUBCASE("SBM dataset with splits survives a save/load round trip") {
    Rng rng(14);
    auto ds = sgf::generate_sbm(60, 3, 0.3, 0.02, 5, rng);
    auto masks = sgf::make_split(ds, sgf::SplitSpec::ratio(0.5, 0.25, 0.25), rng);
    ds.train_mask = masks.train;
    ds.valid_mask = masks.valid;
    ds.test_mask = masks.test;
    auto out = temp_dir("sbm_rt");
    sgf::save_generic(out.string(), ds);
    auto again = sgf::load_generic(out.string());
    CHECK(datasets_equal(ds, again));
  }
  SUBCASE("missing file and bad ids name the offender") {
    auto broken = temp_dir("broken");
    std::ofstream(broken / "meta.json")
        << R"({"num_nodes":2,"feat_dim":1,"num_classes":2,"task":"single-label"})";
    CHECK_THROWS_AS(sgf::load_generic(broken.string()), sgf::IoError);
    std::ofstream(broken / "edges.txt") << "0 7\n";
    std::ofstream(broken / "features.csv") << "1\n0\n";
    std::ofstream(broken / "labels.csv") << "0\n1\n";
    CHECK_THROWS_WITH_AS(sgf::load_generic(broken.string()), doctest::Contains("edges.txt"),
                         sgf::FormatError);
  }
  SUBCASE("row count mismatch is a format error") {
    auto bad = temp_dir("badrows");
    std::ofstream(bad / "meta.json")
        << R"({"num_nodes":3,"feat_dim":1,"num_classes":2,"task":"single-label"})";
    std::ofstream(bad / "edges.txt") << "0 1\n";
    std::ofstream(bad / "features.csv") << "1\n0\n";
    std::ofstream(bad / "labels.csv") << "0\n1\n0\n";
    CHECK_THROWS_WITH_AS(sgf::load_generic(bad.string()), doctest::Contains("features.csv"),
                         sgf::FormatError);
  }
}
