#pragma once

#include <stdexcept>
#include <string>

namespace critmass {

enum class ErrorKind {
  InvalidArgument,
  InvalidGrid,
  NonConvergence,
  GridTooCoarse,
  QuadratureFailure,
  InconsistentDerivative,
  DegenerateCorrection,
  TailNotResolved,
  MassTargetUnreachable,
  MonotonicityLoss,
  LinearSolveFailure,
  NegativeDensity,
  InsufficientSamples,
  GridMismatch,
  ProfileMissing,
  AssemblyFailure,
  EigenSolveFailure,
  IndefiniteB,
  NoBracket,
  MultipleRoots,
  InsufficientSpan,
  EnvelopeViolated,
};

const char* to_string(ErrorKind k);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace critmass
