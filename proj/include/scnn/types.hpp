#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/CXX11/Tensor>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace scnn {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Row-major so that Map views over tensor storage line up with (channel, t, y, x) order.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Spatiotemporal volume laid out as (channels, frames, height, width).
template <typename Scalar>
using Volume = Eigen::Tensor<Scalar, 4, Eigen::RowMajor>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
using VideoTensor = Volume<float>;
using InputTensor = Volume<double>;

// Thrown for malformed configuration or unusable input documents (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a numeric computation leaves the finite range (CLI exit code 2).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace scnn
