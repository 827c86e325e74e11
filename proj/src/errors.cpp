#include "critmass/errors.hpp"

namespace critmass {

const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidGrid: return "InvalidGrid";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::GridTooCoarse: return "GridTooCoarse";
    case ErrorKind::QuadratureFailure: return "QuadratureFailure";
    case ErrorKind::InconsistentDerivative: return "InconsistentDerivative";
    case ErrorKind::DegenerateCorrection: return "DegenerateCorrection";
    case ErrorKind::TailNotResolved: return "TailNotResolved";
    case ErrorKind::MassTargetUnreachable: return "MassTargetUnreachable";
    case ErrorKind::MonotonicityLoss: return "MonotonicityLoss";
    case ErrorKind::LinearSolveFailure: return "LinearSolveFailure";
    case ErrorKind::NegativeDensity: return "NegativeDensity";
    case ErrorKind::InsufficientSamples: return "InsufficientSamples";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::ProfileMissing: return "ProfileMissing";
    case ErrorKind::AssemblyFailure: return "AssemblyFailure";
    case ErrorKind::EigenSolveFailure: return "EigenSolveFailure";
    case ErrorKind::IndefiniteB: return "IndefiniteB";
    case ErrorKind::NoBracket: return "NoBracket";
    case ErrorKind::MultipleRoots: return "MultipleRoots";
    case ErrorKind::InsufficientSpan: return "InsufficientSpan";
    case ErrorKind::EnvelopeViolated: return "EnvelopeViolated";
  }
  return "Unknown";
}

}  // namespace critmass
