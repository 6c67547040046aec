#pragma once

#include <stdexcept>
#include <string>

namespace kplsvm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or out-of-domain argument.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Pieces that cannot be expressed as a member of the loss family.
class RepresentationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file, unknown label, bad split.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training precondition failure or propagated solver failure.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Model file that cannot be read back.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Equality/sign constraints admit no point. `certificate_norm` is the
/// distance between the reachable constraint range and the target.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, double certificate_norm)
      : Error(what), certificate_norm_(certificate_norm) {}

  double certificate_norm() const noexcept { return certificate_norm_; }

 private:
  double certificate_norm_;
};

}  // namespace kplsvm
