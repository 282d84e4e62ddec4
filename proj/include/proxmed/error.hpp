#pragma once

#include <stdexcept>
#include <string>

namespace proxmed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad files, schema violations, dimension mismatches.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A moment system could not be solved (singular, non-convergent, unstable).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// A discrete identification matrix is rank deficient relative to the latent support.
class CompletenessError : public Error {
 public:
  CompletenessError(const std::string& what, std::string cell)
      : Error(what), cell_(std::move(cell)) {}
  const std::string& cell() const noexcept { return cell_; }

 private:
  std::string cell_;
};

}  // namespace proxmed
