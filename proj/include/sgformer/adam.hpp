#pragma once

#include <cmath>
#include <vector>

#include "sgformer/types.hpp"

namespace sgf {

/// Adam with decoupled weight decay. Moments are kept per parameter matrix;
/// decay is applied directly to the parameter (param -= lr * wd * param),
/// not folded into the gradient.
template <class S>
struct AdamState {
  std::vector<Mat<S>> m, v;
  long step = 0;
  S beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);

  explicit AdamState(const std::vector<Mat<S>*>& params) {
    for (const Mat<S>* p : params) {
      m.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      v.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    }
  }

  std::size_t footprint_bytes() const {
    std::size_t b = 0;
    for (const auto& x : m) b += sizeof(S) * x.size();
    for (const auto& x : v) b += sizeof(S) * x.size();
    return b;
  }
};

template <class S>
void adam_step(const std::vector<Mat<S>*>& params, const std::vector<Mat<S>>& grads,
               AdamState<S>& state, S lr, S weight_decay) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  ++state.step;
  const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta1), state.step));
  const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta2), state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat<S>& p = *params[i];
    const Mat<S>& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw ShapeError("adam_step: gradient shape != parameter shape");
    state.m[i] = state.beta1 * state.m[i] + (S(1) - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (S(1) - state.beta2) * g.cwiseProduct(g);
    const Mat<S> m_hat = state.m[i] / bc1;
    const Mat<S> v_hat = state.v[i] / bc2;
    p.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + state.eps);
    if (weight_decay > S(0)) p -= (lr * weight_decay) * p;
  }
}

}  // namespace sgf
