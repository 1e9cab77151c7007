#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "sgformer/attention.hpp"
#include "sgformer/io.hpp"
#include "sgformer/rng.hpp"

using sgf::AttentionOutput;
using sgf::AttentionParams;
using sgf::Index;
using sgf::Mat;
using sgf::Rng;

namespace {

Mat<double> random_mat(Index r, Index c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

AttentionParams<double> random_params(Index d, double beta, Rng& rng) {
  AttentionParams<double> p;
  p.w_q = random_mat(d, d, rng, 0.5);
  p.w_k = random_mat(d, d, rng, 0.5);
  p.w_v = random_mat(d, d, rng, 0.5);
  p.beta = beta;
  return p;
}

}  // namespace

TEST_CASE("single node: the attention term cancels") {
  Rng rng(1);
  for (int t = 0; t < 5; ++t) {
    Mat<double> z0 = random_mat(1, 4, rng);
    auto p = random_params(4, 0.7, rng);
    const Mat<double> v = z0 * p.w_v;
    const Mat<double> expect = 0.7 * v + 0.3 * z0;
    auto out = sgf::linear_attention(z0, p);
    CHECK((out.z - expect).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("zero key matrix reduces to a plain value map") {
  Rng rng(2);
  Mat<double> z0 = random_mat(6, 3, rng);
  auto p = random_params(3, 0.4, rng);
  p.w_k.setZero();
  const Mat<double> expect = 0.4 * (z0 * p.w_v) + 0.6 * z0;
  auto out = sgf::linear_attention(z0, p);
  CHECK((out.z - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("factored form matches the dense oracle") {
  Rng rng(3);
  SUBCASE("N=50, d=8 single instance") {
    Mat<double> z0 = random_mat(50, 8, rng);
    auto p = random_params(8, 0.5, rng);
    auto fast = sgf::linear_attention(z0, p);
    auto dense = sgf::dense_attention_oracle(z0, p);
    CHECK((fast.z - dense.z).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("30 random instances, mixed sizes") {
    for (int t = 0; t < 30; ++t) {
      const Index n = 2 + static_cast<Index>(rng.uniform_int(60));
      const Index d = 1 + static_cast<Index>(rng.uniform_int(12));
      Mat<double> z0 = random_mat(n, d, rng);
      auto p = random_params(d, 0.2 + 0.8 * rng.uniform(), rng);
      auto fast = sgf::linear_attention(z0, p);
      auto dense = sgf::dense_attention_oracle(z0, p);
      CHECK((fast.z - dense.z).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("oracle coefficient rows sum to one") {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const Index n = 2 + static_cast<Index>(rng.uniform_int(40));
    Mat<double> z0 = random_mat(n, 6, rng);
    auto out = sgf::dense_attention_oracle(z0, random_params(6, 0.5, rng));
    for (Index u = 0; u < n; ++u) CHECK(std::abs(out.c.row(u).sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("coefficient formula on the N=2 hand instance") {
  Mat<double> scores(2, 2);
  scores << 0.1, 0.2, 0.3, 0.4;
  Mat<double> c = sgf::attention_coefficients(scores);
  CHECK(c(0, 0) == doctest::Approx(2.1 / 2.3).epsilon(1e-14));
  CHECK(c(0, 1) == doctest::Approx(0.2 / 2.3).epsilon(1e-14));
  CHECK(c(1, 0) == doctest::Approx(0.3 / 2.7).epsilon(1e-14));
  CHECK(c(1, 1) == doctest::Approx(2.4 / 2.7).epsilon(1e-14));
  CHECK(c.row(0).sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("normalizer entries stay inside [0, 2] for unit-norm scores") {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Index n = 2 + static_cast<Index>(rng.uniform_int(30));
    Mat<double> z0 = random_mat(n, 5, rng);
    auto p = random_params(5, 0.5, rng);
    const Mat<double> qt = (z0 * p.w_q) / (z0 * p.w_q).norm();
    const Mat<double> kt = (z0 * p.w_k) / (z0 * p.w_k).norm();
    sgf::Vec<double> den =
        (1.0 + (qt * kt.colwise().sum().transpose()).array() / n).matrix();
    CHECK(den.minCoeff() >= 0.0);
    CHECK(den.maxCoeff() <= 2.0);
  }
}

TEST_CASE("degenerate normalizer fires the error contract") {
  // N=1 with K = -Q makes D = 1 + q~ . k~ = 0 exactly.
  Mat<double> z0(1, 2);
  z0 << 1, 0;
  AttentionParams<double> p;
  p.w_q = Mat<double>::Identity(2, 2);
  p.w_k = -Mat<double>::Identity(2, 2);
  p.w_v = Mat<double>::Identity(2, 2);
  p.beta = 0.5;
  CHECK_THROWS_WITH_AS(sgf::linear_attention(z0, p), doctest::Contains("row 0"),
                       sgf::DegeneracyError);
}

TEST_CASE("softmax attention") {
  Rng rng(6);
  SUBCASE("identical rows give uniform coefficients") {
    Mat<double> z0 = random_mat(1, 4, rng).replicate(5, 1);
    auto out = sgf::softmax_attention(z0, random_params(4, 0.5, rng));
    CHECK((out.c.array() - 0.2).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("rows sum to one") {
    Mat<double> z0 = random_mat(7, 3, rng);
    auto out = sgf::softmax_attention(z0, random_params(3, 0.5, rng));
    for (Index u = 0; u < 7; ++u) CHECK(std::abs(out.c.row(u).sum() - 1.0) < 1e-12);
  }
  SUBCASE("N=3 hand-computed instance") {
    // Identity maps and axis-aligned rows: scores = Z0 Z0^T / sqrt(d).
    Mat<double> z0(3, 3);
    z0 << 1, 0, 0, 0, 2, 0, 0, 0, 3;
    AttentionParams<double> p;
    p.w_q = Mat<double>::Identity(3, 3);
    p.w_k = Mat<double>::Identity(3, 3);
    p.w_v = Mat<double>::Identity(3, 3);
    p.beta = 1.0;
    auto out = sgf::softmax_attention(z0, p);
    const double s = std::sqrt(3.0);
    const double e0 = std::exp(1.0 / s);  // row 0 logits: [1/s, 0, 0]
    const double denom = e0 + 2.0;
    CHECK(out.c(0, 0) == doctest::Approx(e0 / denom).epsilon(1e-12));
    CHECK(out.c(0, 1) == doctest::Approx(1.0 / denom).epsilon(1e-12));
    const Mat<double> expect_z = out.c * z0;  // beta = 1
    CHECK((out.z - expect_z).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("multilayer attention") {
  Rng rng(7);
  Mat<double> z0 = random_mat(12, 5, rng);

  SUBCASE("one layer with self-loop equals the single call") {
    auto p = random_params(5, 0.6, rng);
    auto stacked = sgf::multilayer_attention<double>(z0, {p});
    CHECK((stacked - sgf::linear_attention(z0, p).z).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("two layers equal the manual composition") {
    auto p1 = random_params(5, 0.6, rng);
    auto p2 = random_params(5, 0.3, rng);
    auto manual = sgf::linear_attention(sgf::linear_attention(z0, p1).z, p2).z;
    auto stacked = sgf::multilayer_attention<double>(z0, {p1, p2});
    CHECK((stacked - manual).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("three layers match the dense-oracle composition") {
    std::vector<AttentionParams<double>> layers{random_params(5, 0.5, rng),
                                                random_params(5, 0.7, rng),
                                                random_params(5, 0.4, rng)};
    Mat<double> z = z0;
    for (const auto& p : layers) z = sgf::dense_attention_oracle(z, p).z;
    auto stacked = sgf::multilayer_attention(z0, layers);
    CHECK((stacked - z).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("without self-loop forces beta to one") {
    auto p = random_params(5, 0.6, rng);
    auto no_loop = sgf::multilayer_attention<double>(z0, {p}, sgf::SelfLoopMode::WithoutSelfLoop);
    AttentionParams<double> p1 = p;
    p1.beta = 1.0;
    CHECK((no_loop - sgf::linear_attention(z0, p1).z).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("empty layer list is a config error") {
    CHECK_THROWS_AS(sgf::multilayer_attention<double>(z0, {}), sgf::ConfigError);
  }
}

TEST_CASE("dense paths enforce the materialization guard") {
  Rng rng(8);
  Mat<double> z0 = random_mat(8, 3, rng);
  auto p = random_params(3, 0.5, rng);
  CHECK_THROWS_AS(sgf::dense_attention_oracle(z0, p, 4), sgf::SizeError);
  CHECK_THROWS_AS(sgf::softmax_attention(z0, p, 4), sgf::SizeError);
}

TEST_CASE("attention export writes the documented CSV shape") {
  Rng rng(9);
  Mat<double> z0 = random_mat(4, 3, rng);
  auto out = sgf::dense_attention_oracle(z0, random_params(3, 0.5, rng));
  std::ostringstream os;
  sgf::export_attention_csv(os, out.c);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "4");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
  }
  CHECK(rows == 4);
}
