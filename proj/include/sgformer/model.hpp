#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "sgformer/attention.hpp"
#include "sgformer/gcn.hpp"
#include "sgformer/graph.hpp"
#include "sgformer/tape.hpp"
#include "sgformer/types.hpp"

namespace sgf {

enum class AttentionKind { Linear, SoftmaxDense };

/// Full SGFormer parameter set: one-layer input MLP (D -> d), the attention
/// layer(s), the GCN branch, and the linear output head (d -> C). alpha
/// weighs the GCN branch against the attention branch in the output fusion.
/// Parameter count is O(D d + d^2 + d C), independent of N.
template <class S>
struct SGFormerParams {
  Mat<S> w_in, b_in;    // D x d, 1 x d
  std::vector<AttentionParams<S>> attention;  // default: exactly one layer
  GCNParams<S> gcn;
  Mat<S> w_out, b_out;  // d x C, 1 x C

  S alpha = S(0.5);
  S dropout = S(0);
  AttentionKind attention_kind = AttentionKind::Linear;
  bool attention_self_loop = true;

  static SGFormerParams init(Index in_dim, Index hidden, Index out_dim, int gcn_layers,
                             int attn_layers, S alpha, S beta, S dropout, Rng& rng) {
    if (!(alpha >= S(0) && alpha <= S(1))) throw ConfigError("model: alpha must be in [0, 1]");
    if (attn_layers < 1) throw ConfigError("model: need at least one attention layer");
    SGFormerParams p;
    p.w_in = glorot_uniform<S>(in_dim, hidden, rng);
    p.b_in = Mat<S>::Zero(1, hidden);
    for (int k = 0; k < attn_layers; ++k)
      p.attention.push_back(AttentionParams<S>::glorot(hidden, beta, rng));
    p.gcn = GCNParams<S>::glorot(hidden, gcn_layers, dropout, rng);
    p.w_out = glorot_uniform<S>(hidden, out_dim, rng);
    p.b_out = Mat<S>::Zero(1, out_dim);
    p.alpha = alpha;
    p.dropout = dropout;
    return p;
  }

  Index hidden_dim() const { return w_in.cols(); }
  Index in_dim() const { return w_in.rows(); }
  Index out_dim() const { return w_out.cols(); }

  std::vector<Mat<S>*> trainable() {
    std::vector<Mat<S>*> out{&w_in, &b_in};
    for (auto& a : attention) {
      out.push_back(&a.w_q);
      out.push_back(&a.w_k);
      out.push_back(&a.w_v);
    }
    for (auto& w : gcn.weights) out.push_back(&w);
    out.push_back(&w_out);
    out.push_back(&b_out);
    return out;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    n += w_in.size() + b_in.size() + w_out.size() + b_out.size();
    for (const auto& a : attention) n += a.w_q.size() + a.w_k.size() + a.w_v.size();
    for (const auto& w : gcn.weights) n += w.size();
    return n;
  }

  std::size_t footprint_bytes() const { return num_parameters() * sizeof(S); }
};

template <class S>
struct ModelOutput {
  Mat<S> logits;  // N x C
  Mat<S> z_o;     // N x d fused embedding
};

/// Inference/plain forward:
///   Z0  = dropout(relu(X W_in + b_in))
///   Z   = attention(Z0)            (stacked for the multi-layer ablation)
///   Z_O = (1 - alpha) Z + alpha GCN(Z0, A_hat)
///   Y   = Z_O W_out + b_out        (logits; losses own softmax/sigmoid)
/// Both branches are always evaluated, so alpha = 0 or 1 provably ignores
/// the other branch's parameters.
template <class S>
ModelOutput<S> forward(const Mat<S>& x, const SparseGraph<S>& a_hat, const SGFormerParams<S>& p,
                       Rng& rng, bool training) {
  if (x.cols() != p.in_dim()) throw ShapeError("forward: feature width != input dim");
  if (a_hat.num_nodes != x.rows()) throw ShapeError("forward: adjacency size != node count");

  Mat<S> z0 = relu(Mat<S>((x * p.w_in).rowwise() + p.b_in.row(0)));
  z0 = dropout(z0, p.dropout, rng, training);

  Mat<S> z = z0;
  for (const auto& layer : p.attention) {
    AttentionParams<S> eff = layer;
    if (!p.attention_self_loop) eff.beta = S(1);
    z = (p.attention_kind == AttentionKind::Linear) ? linear_attention(z, eff).z
                                                    : softmax_attention(z, eff).z;
  }

  Mat<S> gn = gcn_forward(z0, a_hat, p.gcn, rng, training);

  ModelOutput<S> out;
  out.z_o = (S(1) - p.alpha) * z + p.alpha * gn;
  out.logits = (out.z_o * p.w_out).rowwise() + p.b_out.row(0);
  return out;
}

template <class S>
struct ModelVars {
  typename Tape<S>::Var w_in, b_in, w_out, b_out;
  std::vector<AttentionVars<S>> attention;
  GCNVars<S> gcn;

  std::vector<typename Tape<S>::Var> list() const {
    std::vector<typename Tape<S>::Var> out{w_in, b_in};
    for (const auto& a : attention)
      for (auto v : a.list()) out.push_back(v);
    for (auto v : gcn.list()) out.push_back(v);
    out.push_back(w_out);
    out.push_back(b_out);
    return out;
  }
};

/// Differentiable forward; same computation as forward(), recorded on the
/// tape. Returns the logits node together with the bound parameter leaves.
template <class S>
std::pair<typename Tape<S>::Var, ModelVars<S>> forward_node(Tape<S>& t, const Mat<S>& x,
                                                            const SparseGraph<S>& a_hat,
                                                            const SGFormerParams<S>& p, Rng& rng,
                                                            bool training) {
  ModelVars<S> vars;
  vars.w_in = t.param(p.w_in);
  vars.b_in = t.param(p.b_in);
  for (const auto& a : p.attention) vars.attention.push_back(AttentionVars<S>::bind(t, a));
  vars.gcn = GCNVars<S>::bind(t, p.gcn);
  vars.w_out = t.param(p.w_out);
  vars.b_out = t.param(p.b_out);

  auto xin = t.input(x);
  auto z0 = t.dropout(t.relu(t.add_row(t.matmul(xin, vars.w_in), vars.b_in)), p.dropout, rng, training);

  auto z = z0;
  for (std::size_t k = 0; k < p.attention.size(); ++k) {
    const S beta = p.attention_self_loop ? p.attention[k].beta : S(1);
    z = (p.attention_kind == AttentionKind::Linear)
            ? linear_attention_node(t, z, vars.attention[k], beta)
            : softmax_attention_node(t, z, vars.attention[k], beta);
  }

  auto gn = gcn_forward_node(t, z0, a_hat, vars.gcn, p.gcn.dropout, rng, training);
  auto z_o = t.lincomb(S(1) - p.alpha, z, p.alpha, gn);
  auto logits = t.add_row(t.matmul(z_o, vars.w_out), vars.b_out);
  return {logits, vars};
}

/// Argmax class per row; ties break to the lowest index.
template <class S>
VecXi predict_classes(const Mat<S>& logits) {
  VecXi out(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

/// Elementwise sigmoid, the multi-label per-task probabilities.
template <class S>
Mat<S> predict_probabilities(const Mat<S>& logits) {
  return logits.unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
}

// ---------------------------------------------------------------------------
// Checkpoints: binary container with shape headers; round-trips are exact
// for both scalar widths.

namespace detail {

constexpr char kCheckpointMagic[8] = {'S', 'G', 'F', 'C', 'K', 'P', 'T', '1'};

template <class S>
void write_mat(std::ostream& os, const Mat<S>& m) {
  const std::uint64_t r = m.rows(), c = m.cols();
  os.write(reinterpret_cast<const char*>(&r), sizeof(r));
  os.write(reinterpret_cast<const char*>(&c), sizeof(c));
  os.write(reinterpret_cast<const char*>(m.data()), sizeof(S) * m.size());
}

template <class S>
Mat<S> read_mat(std::istream& is) {
  std::uint64_t r = 0, c = 0;
  is.read(reinterpret_cast<char*>(&r), sizeof(r));
  is.read(reinterpret_cast<char*>(&c), sizeof(c));
  if (!is) throw IoError("checkpoint: truncated matrix header");
  Mat<S> m(static_cast<Index>(r), static_cast<Index>(c));
  is.read(reinterpret_cast<char*>(m.data()), sizeof(S) * m.size());
  if (!is) throw IoError("checkpoint: truncated matrix payload");
  return m;
}

}  // namespace detail

template <class S>
void save_checkpoint(const std::string& path, const SGFormerParams<S>& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for write: " + path);
  os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  const std::uint32_t scalar_bytes = sizeof(S);
  const std::uint32_t attn_layers = static_cast<std::uint32_t>(p.attention.size());
  const std::uint32_t gcn_layers = static_cast<std::uint32_t>(p.gcn.weights.size());
  const std::uint32_t kind = static_cast<std::uint32_t>(p.attention_kind);
  const std::uint32_t self_loop = p.attention_self_loop ? 1 : 0;
  const double alpha = static_cast<double>(p.alpha);
  const double dropout = static_cast<double>(p.dropout);
  const double beta = p.attention.empty() ? 0.0 : static_cast<double>(p.attention[0].beta);
  os.write(reinterpret_cast<const char*>(&scalar_bytes), sizeof(scalar_bytes));
  os.write(reinterpret_cast<const char*>(&attn_layers), sizeof(attn_layers));
  os.write(reinterpret_cast<const char*>(&gcn_layers), sizeof(gcn_layers));
  os.write(reinterpret_cast<const char*>(&kind), sizeof(kind));
  os.write(reinterpret_cast<const char*>(&self_loop), sizeof(self_loop));
  os.write(reinterpret_cast<const char*>(&alpha), sizeof(alpha));
  os.write(reinterpret_cast<const char*>(&dropout), sizeof(dropout));
  os.write(reinterpret_cast<const char*>(&beta), sizeof(beta));
  detail::write_mat(os, p.w_in);
  detail::write_mat(os, p.b_in);
  for (const auto& a : p.attention) {
    detail::write_mat(os, a.w_q);
    detail::write_mat(os, a.w_k);
    detail::write_mat(os, a.w_v);
  }
  for (const auto& w : p.gcn.weights) detail::write_mat(os, w);
  detail::write_mat(os, p.w_out);
  detail::write_mat(os, p.b_out);
  if (!os) throw IoError("checkpoint: write failed: " + path);
}

template <class S>
SGFormerParams<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::string(magic, 8) != std::string(detail::kCheckpointMagic, 8))
    throw FormatError("checkpoint: bad magic: " + path);
  std::uint32_t scalar_bytes = 0, attn_layers = 0, gcn_layers = 0, kind = 0, self_loop = 0;
  double alpha = 0, dropout = 0, beta = 0;
  is.read(reinterpret_cast<char*>(&scalar_bytes), sizeof(scalar_bytes));
  is.read(reinterpret_cast<char*>(&attn_layers), sizeof(attn_layers));
  is.read(reinterpret_cast<char*>(&gcn_layers), sizeof(gcn_layers));
  is.read(reinterpret_cast<char*>(&kind), sizeof(kind));
  is.read(reinterpret_cast<char*>(&self_loop), sizeof(self_loop));
  is.read(reinterpret_cast<char*>(&alpha), sizeof(alpha));
  is.read(reinterpret_cast<char*>(&dropout), sizeof(dropout));
  is.read(reinterpret_cast<char*>(&beta), sizeof(beta));
  if (!is) throw FormatError("checkpoint: truncated header: " + path);
  if (scalar_bytes != sizeof(S))
    throw FormatError("checkpoint: scalar width mismatch (file stores " +
                      std::to_string(scalar_bytes * 8) + "-bit)");
  SGFormerParams<S> p;
  p.alpha = static_cast<S>(alpha);
  p.dropout = static_cast<S>(dropout);
  p.attention_kind = static_cast<AttentionKind>(kind);
  p.attention_self_loop = self_loop != 0;
  p.w_in = detail::read_mat<S>(is);
  p.b_in = detail::read_mat<S>(is);
  for (std::uint32_t k = 0; k < attn_layers; ++k) {
    AttentionParams<S> a;
    a.w_q = detail::read_mat<S>(is);
    a.w_k = detail::read_mat<S>(is);
    a.w_v = detail::read_mat<S>(is);
    a.beta = static_cast<S>(beta);
    p.attention.push_back(std::move(a));
  }
  p.gcn.dropout = p.dropout;
  for (std::uint32_t k = 0; k < gcn_layers; ++k) p.gcn.weights.push_back(detail::read_mat<S>(is));
  p.w_out = detail::read_mat<S>(is);
  p.b_out = detail::read_mat<S>(is);
  return p;
}

}  // namespace sgf
