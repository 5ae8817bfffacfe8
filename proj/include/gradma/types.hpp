#ifndef GRADMA_TYPES_HPP
#define GRADMA_TYPES_HPP

#include <cstdint>
#include <stdexcept>

#include <Eigen/Core>

namespace gradma {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using real = double;

// Flat parameter / gradient / update vector. Every module exchanges these.
using ParamVec = Vector<real>;

using WorkerId = int;

// Shape or size inconsistency between arguments.
struct StructuralError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite value produced during training.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gradma

#endif  // GRADMA_TYPES_HPP
