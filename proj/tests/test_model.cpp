#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "sgformer/gcn.hpp"
#include "sgformer/model.hpp"
#include "sgformer/rng.hpp"
#include "sgformer/tape.hpp"

using sgf::GCNParams;
using sgf::Index;
using sgf::Mat;
using sgf::Rng;
using sgf::SGFormerParams;
using sgf::SparseGraph;

namespace {

Mat<double> random_mat(Index r, Index c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

SparseGraph<double> ring_graph(Index n) {
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < n; ++u) edges.emplace_back(u, (u + 1) % n);
  return sgf::graph_from_edges<double>(n, edges);
}

/// Straight-line re-implementation of the full forward pass on dense
/// matrices, independent of the modular code path. Inference only.
Mat<double> straight_line_logits(const Mat<double>& x, const Mat<double>& a_dense,
                                 const SGFormerParams<double>& p) {
  const Index n = x.rows();
  Mat<double> z0 = ((x * p.w_in).rowwise() + p.b_in.row(0)).cwiseMax(0.0);

  Mat<double> z = z0;
  for (const auto& layer : p.attention) {
    Mat<double> q = z * layer.w_q;
    Mat<double> k = z * layer.w_k;
    Mat<double> v = z * layer.w_v;
    q /= q.norm();
    k /= k.norm();
    Mat<double> zn(n, z.cols());
    for (Index u = 0; u < n; ++u) {
      double den = 1.0;
      Eigen::RowVectorXd acc = v.row(u);
      for (Index w = 0; w < n; ++w) {
        const double s = q.row(u).dot(k.row(w));
        den += s / n;
        acc += (s / n) * v.row(w);
      }
      zn.row(u) = layer.beta * (acc / den) + (1.0 - layer.beta) * z.row(u);
    }
    z = zn;
  }

  Mat<double> g = z0;
  for (std::size_t l = 0; l < p.gcn.weights.size(); ++l) {
    g = a_dense * g * p.gcn.weights[l];
    if (l + 1 < p.gcn.weights.size()) g = g.cwiseMax(0.0);
  }

  Mat<double> z_o = (1.0 - p.alpha) * z + p.alpha * g;
  return (z_o * p.w_out).rowwise() + p.b_out.row(0);
}

}  // namespace

TEST_CASE("gcn_forward hand cases") {
  SUBCASE("one layer, identity weights, uniform two-node adjacency") {
    SparseGraph<double> a;
    a.num_nodes = 2;
    a.row_ptr = {0, 2, 4};
    a.col_idx = {0, 1, 0, 1};
    a.edge_val = {0.5, 0.5, 0.5, 0.5};
    GCNParams<double> p;
    p.weights = {Mat<double>::Identity(2, 2)};
    Mat<double> z0(2, 2);
    z0 << 2, 0, 0, 2;
    Rng rng(0);
    Mat<double> out = sgf::gcn_forward(z0, a, p, rng, false);
    Mat<double> expect(2, 2);
    expect << 1, 1, 1, 1;
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("isolated node keeps only its self-loop contribution") {
    auto g = sgf::graph_from_edges<double>(3, {{0, 1}});  // node 2 isolated
    auto a_hat = sgf::normalize_adjacency(g, true);
    Rng rng(1);
    Mat<double> z0 = random_mat(3, 4, rng);
    GCNParams<double> p;
    p.weights = {random_mat(4, 4, rng)};
    Mat<double> out = sgf::gcn_forward(z0, a_hat, p, rng, false);
    Mat<double> expect_row = z0.row(2) * p.weights[0];  // A_hat(2,2) = 1
    CHECK((out.row(2) - expect_row).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("gcn_forward matches the dense composition oracle") {
  Rng rng(2);
  auto g = ring_graph(10);
  auto a_hat = sgf::normalize_adjacency(g, true);
  const Mat<double> ad = a_hat.to_dense();
  Mat<double> z0 = random_mat(10, 6, rng);
  GCNParams<double> p;
  p.weights = {random_mat(6, 6, rng), random_mat(6, 6, rng)};
  Rng fwd_rng(3);
  Mat<double> got = sgf::gcn_forward(z0, a_hat, p, fwd_rng, false);
  Mat<double> expect = (ad * z0 * p.weights[0]).cwiseMax(0.0);
  expect = ad * expect * p.weights[1];  // last layer linear
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gcn_forward with zero weights returns zero") {
  Rng rng(4);
  auto a_hat = sgf::normalize_adjacency(ring_graph(6), true);
  GCNParams<double> p;
  p.weights = {Mat<double>::Zero(3, 3), Mat<double>::Zero(3, 3)};
  Mat<double> out = sgf::gcn_forward(random_mat(6, 3, rng), a_hat, p, rng, false);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("alpha extremes isolate the branches bit-for-bit") {
  Rng rng(5);
  auto g = ring_graph(9);
  auto a_hat = sgf::normalize_adjacency(g, true);
  Mat<double> x = random_mat(9, 7, rng);
  Rng init(11);
  auto params = SGFormerParams<double>::init(7, 5, 3, 2, 1, 1.0, 0.5, 0.0, init);

  SUBCASE("alpha = 1 ignores attention weights") {
    params.alpha = 1.0;
    Rng r1(0), r2(0);
    Mat<double> base = sgf::forward(x, a_hat, params, r1, false).logits;
    params.attention[0].w_q.array() += 3.7;
    Mat<double> perturbed = sgf::forward(x, a_hat, params, r2, false).logits;
    CHECK(base == perturbed);  // bit-identical
  }
  SUBCASE("alpha = 0 ignores GCN weights") {
    params.alpha = 0.0;
    Rng r1(0), r2(0);
    Mat<double> base = sgf::forward(x, a_hat, params, r1, false).logits;
    for (auto& w : params.gcn.weights) w.array() -= 1.9;
    Mat<double> perturbed = sgf::forward(x, a_hat, params, r2, false).logits;
    CHECK(base == perturbed);
  }
}

TEST_CASE("forward matches the straight-line re-implementation") {
  Rng rng(6);
  auto g = ring_graph(12);
  auto a_hat = sgf::normalize_adjacency(g, true);
  Mat<double> x = random_mat(12, 5, rng);
  Rng init(21);
  auto params = SGFormerParams<double>::init(5, 4, 3, 2, 1, 0.6, 0.45, 0.0, init);
  Rng fwd(0);
  Mat<double> got = sgf::forward(x, a_hat, params, fwd, false).logits;
  Mat<double> expect = straight_line_logits(x, a_hat.to_dense(), params);
  CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("predict") {
  SUBCASE("argmax and documented tie-break") {
    Mat<double> logits(2, 3);
    logits << 0.1, 2.0, -1.0, 1.0, 1.0, 0.0;
    auto cls = sgf::predict_classes(logits);
    CHECK(cls[0] == 1);
    CHECK(cls[1] == 0);  // tie goes to the lowest index
  }
  SUBCASE("random logits vs a brute-force scan") {
    Rng rng(7);
    Mat<double> logits = random_mat(40, 6, rng);
    auto cls = sgf::predict_classes(logits);
    for (Index i = 0; i < 40; ++i) {
      for (Index c = 0; c < 6; ++c) CHECK(logits(i, cls[i]) >= logits(i, c));
    }
  }
  SUBCASE("multi-label probabilities are elementwise sigmoid") {
    Mat<double> logits(1, 3);
    logits << 0.0, 100.0, -100.0;
    Mat<double> p = sgf::predict_probabilities(logits);
    CHECK(p(0, 0) == doctest::Approx(0.5));
    CHECK(p(0, 1) == doctest::Approx(1.0));
    CHECK(p(0, 2) == doctest::Approx(0.0));
  }
}

TEST_CASE("parameter count is independent of N") {
  Rng init(1);
  auto params = SGFormerParams<double>::init(100, 16, 7, 2, 1, 0.5, 0.5, 0.0, init);
  const std::size_t expect = 100 * 16 + 16     // input layer
                             + 3 * 16 * 16      // attention
                             + 2 * 16 * 16      // gcn layers
                             + 16 * 7 + 7;      // output layer
  CHECK(params.num_parameters() == expect);
}

TEST_CASE("inference is permutation-equivariant") {
  Rng rng(8);
  const Index n = 20;
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < n; ++u)
    for (Index v = u + 1; v < n; ++v)
      if (rng.uniform() < 0.2) edges.emplace_back(u, v);
  auto g = sgf::graph_from_edges<double>(n, edges);
  Mat<double> x = random_mat(n, 6, rng);
  Rng init(33);
  auto params = SGFormerParams<double>::init(6, 5, 4, 2, 1, 0.5, 0.5, 0.0, init);

  std::vector<Index> perm(n);
  for (Index i = 0; i < n; ++i) perm[i] = i;
  Rng shuf(9);
  shuf.shuffle(perm);

  // Permuted inputs: row i of the permuted problem is node perm[i].
  std::vector<std::pair<Index, Index>> pedges;
  std::vector<Index> inv(n);
  for (Index i = 0; i < n; ++i) inv[perm[i]] = i;
  for (auto [u, v] : edges) pedges.emplace_back(inv[u], inv[v]);
  auto pg = sgf::graph_from_edges<double>(n, pedges);
  Mat<double> px(n, 6);
  for (Index i = 0; i < n; ++i) px.row(i) = x.row(perm[i]);

  Rng r1(0), r2(0);
  Mat<double> base = sgf::forward(x, sgf::normalize_adjacency(g), params, r1, false).logits;
  Mat<double> permuted =
      sgf::forward(px, sgf::normalize_adjacency(pg), params, r2, false).logits;
  for (Index i = 0; i < n; ++i)
    CHECK((permuted.row(i) - base.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("checkpoint round-trips exactly") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "sgf_ckpt_test.bin").string();

  SUBCASE("64-bit") {
    Rng init(3);
    auto p = SGFormerParams<double>::init(7, 4, 3, 2, 1, 0.8, 0.4, 0.25, init);
    sgf::save_checkpoint(path, p);
    auto q = sgf::load_checkpoint<double>(path);
    CHECK(q.w_in == p.w_in);
    CHECK(q.b_in == p.b_in);
    CHECK(q.attention[0].w_q == p.attention[0].w_q);
    CHECK(q.attention[0].beta == p.attention[0].beta);
    CHECK(q.gcn.weights.size() == p.gcn.weights.size());
    CHECK(q.gcn.weights[1] == p.gcn.weights[1]);
    CHECK(q.w_out == p.w_out);
    CHECK(q.alpha == p.alpha);
    CHECK(q.dropout == p.dropout);
  }
  SUBCASE("32-bit") {
    Rng init(4);
    auto p = SGFormerParams<float>::init(5, 3, 2, 1, 1, 0.5f, 0.5f, 0.0f, init);
    sgf::save_checkpoint(path, p);
    auto q = sgf::load_checkpoint<float>(path);
    CHECK(q.w_in == p.w_in);
    CHECK(q.w_out == p.w_out);
  }
  SUBCASE("scalar width mismatch is rejected") {
    Rng init(5);
    auto p = SGFormerParams<double>::init(5, 3, 2, 1, 1, 0.5, 0.5, 0.0, init);
    sgf::save_checkpoint(path, p);
    CHECK_THROWS_AS(sgf::load_checkpoint<float>(path), sgf::FormatError);
  }
}

TEST_CASE("full model gradients match finite differences") {
  Rng rng(10);
  const Index n = 12;
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < n; ++u)
    for (Index v = u + 1; v < n; ++v)
      if (rng.uniform() < 0.3) edges.emplace_back(u, v);
  auto a_hat = sgf::normalize_adjacency(sgf::graph_from_edges<double>(n, edges), true);
  Mat<double> x = random_mat(n, 6, rng);
  sgf::VecXi labels(n);
  sgf::Mask mask(n, 0);
  for (Index i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(rng.uniform_int(3));
    mask[i] = rng.uniform() < 0.6;
  }
  mask[0] = 1;

  Rng init(77);
  auto params = SGFormerParams<double>::init(6, 5, 3, 2, 1, 0.6, 0.5, 0.3, init);

  auto eval = [&](const SGFormerParams<double>& p, std::vector<Mat<double>>* grads) {
    sgf::Tape<double> tape;
    Rng drop(55);  // fixed masks across evaluations
    auto [logits, vars] = sgf::forward_node(tape, x, a_hat, p, drop, true);
    auto loss = tape.softmax_cross_entropy(logits, labels, mask);
    const double value = tape.value(loss)(0, 0);
    if (grads) *grads = tape.gradients(loss, vars.list());
    return value;
  };

  std::vector<Mat<double>> grads;
  eval(params, &grads);

  auto mats = params.trainable();
  REQUIRE(grads.size() == mats.size());
  Rng pick(123);
  const double h = 1e-5;
  for (std::size_t k = 0; k < mats.size(); ++k) {
    for (int probe = 0; probe < 4; ++probe) {
      const Index i = static_cast<Index>(pick.uniform_int(mats[k]->rows()));
      const Index j = static_cast<Index>(pick.uniform_int(mats[k]->cols()));
      const double orig = (*mats[k])(i, j);
      (*mats[k])(i, j) = orig + h;
      const double up = eval(params, nullptr);
      (*mats[k])(i, j) = orig - h;
      const double down = eval(params, nullptr);
      (*mats[k])(i, j) = orig;
      const double fd = (up - down) / (2 * h);
      const double an = grads[k](i, j);
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      CAPTURE(k);
      CHECK(std::abs(fd - an) / denom < 1e-4);
    }
  }
}

TEST_CASE("forward propagates shape errors") {
  Rng rng(1);
  auto a_hat = sgf::normalize_adjacency(ring_graph(4), true);
  Rng init(2);
  auto params = SGFormerParams<double>::init(3, 4, 2, 1, 1, 0.5, 0.5, 0.0, init);
  Mat<double> bad = random_mat(4, 7, rng);  // wrong feature width
  Rng f(0);
  CHECK_THROWS_AS(sgf::forward(bad, a_hat, params, f, false), sgf::ShapeError);
}
