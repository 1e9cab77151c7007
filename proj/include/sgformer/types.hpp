#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgf {

using Index = Eigen::Index;

/// Dense row-major matrix, the carrier for features, embeddings, parameters
/// and gradients. Row-major so serialized buffers match the on-disk layout.
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using VecXi = Eigen::VectorXi;

/// Boolean node mask, length N.
using Mask = std::vector<std::uint8_t>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct SizeError : Error {
  using Error::Error;
};
struct GraphError : Error {
  using Error::Error;
};
struct DegeneracyError : Error {
  using Error::Error;
};
struct MetricError : Error {
  using Error::Error;
};
struct AnalysisError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

inline Index mask_count(const Mask& m) {
  Index c = 0;
  for (auto b : m) c += (b != 0);
  return c;
}

inline std::vector<Index> mask_indices(const Mask& m) {
  std::vector<Index> idx;
  for (Index i = 0; i < static_cast<Index>(m.size()); ++i)
    if (m[i]) idx.push_back(i);
  return idx;
}

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace sgf
