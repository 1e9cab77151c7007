#pragma once

#include <cmath>

#include "sgformer/rng.hpp"
#include "sgformer/types.hpp"

namespace sgf {

template <class S>
S frobenius_norm(const Mat<S>& a) {
  return a.norm();
}

template <class S>
Mat<S> relu(const Mat<S>& a) {
  return a.cwiseMax(S(0));
}

/// Inverted dropout: in training mode each entry is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); inference is the identity.
/// rate == 0 draws nothing, so a zero-rate config replays the same stream as
/// a no-dropout one.
template <class S>
Mat<S> dropout(const Mat<S>& a, S rate, Rng& rng, bool training) {
  if (rate < S(0) || rate >= S(1)) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!training || rate == S(0)) return a;
  const S keep_scale = S(1) / (S(1) - rate);
  Mat<S> out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out(i, j) = (rng.uniform() >= static_cast<double>(rate)) ? a(i, j) * keep_scale : S(0);
  return out;
}

/// Glorot-uniform init: U(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
template <class S>
Mat<S> glorot_uniform(Index rows, Index cols, Rng& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat<S> w(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) w(i, j) = static_cast<S>(rng.uniform(-s, s));
  return w;
}

template <class S>
Mat<S> gaussian(Index rows, Index cols, Rng& rng, double stddev = 1.0) {
  Mat<S> w(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) w(i, j) = static_cast<S>(stddev * rng.normal());
  return w;
}

}  // namespace sgf
