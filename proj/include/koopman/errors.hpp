#pragma once

#include <stdexcept>
#include <string>

namespace koopman {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad shapes, non-finite entries, unparsable files or configs.
struct InvalidInput : Error {
  using Error::Error;
};

/// The Gram matrix is numerically rank-deficient: the dictionary does not
/// have full column rank under the quadrature rule.
struct IllConditionedGram : Error {
  using Error::Error;
};

/// Input to the unitary eigensolver is not unitary within tolerance.
struct NotUnitary : Error {
  using Error::Error;
};

/// Generic numerical failure: diverging trajectory, singular eigenvector
/// matrix, non-finite intermediate result.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace koopman
