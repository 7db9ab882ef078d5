#pragma once

#include <stdexcept>
#include <string>

namespace rfact {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

/// Cholesky factorization failed: the matrix is not positive definite.
struct NotPositiveDefinite : Error {
  using Error::Error;
};

/// Symmetric eigensolver exceeded its sweep cap.
struct EigenConvergence : Error {
  using Error::Error;
};

/// Sample covariance is singular (too few samples or rank-deficient data).
struct SingularCovariance : Error {
  using Error::Error;
};

/// delta_max is numerically zero: the estimate is already diagonal.
struct DegenerateTolerance : Error {
  using Error::Error;
};

/// Requested divergence budget is >= delta_max.
struct DeltaTooLarge : Error {
  using Error::Error;
};

struct InfeasiblePoint : Error {
  using Error::Error;
};

struct NumericalBreakdown : Error {
  using Error::Error;
};

/// Recovery linear system residual too large for the dual tolerance.
struct InconsistentSystem : Error {
  using Error::Error;
};

/// Kernel of Lambda is empty where a nontrivial one was required.
struct EmptyKernel : Error {
  using Error::Error;
};

/// Recovered Q has an eigenvalue below the projection tolerance.
struct IndefiniteQ : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

/// Output file could not be written or moved into place.
struct IoError : Error {
  using Error::Error;
};

struct AsymmetryError : Error {
  using Error::Error;
};

struct UsageError : Error {
  using Error::Error;
};

}  // namespace rfact
