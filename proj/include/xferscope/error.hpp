#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xferscope {

enum class Errc {
  IoError,
  InvalidMatrix,
  BadMagic,
  TruncatedFile,
  ParseError,
  MissingBasePair,
  SampleCountMismatch,
  DuplicateEntry,
  RowMismatch,
  DegenerateInput,
  NoSharedFeatures,
  DegenerateVector,
  InvalidCoordinate,
  UnknownLanguage,
  InvalidTree,
  LengthMismatch,
  ConstantInput,
  DomainError,
  NonConvergence,
  MissingDistance,
  TooFewPairs,
  NoLayerQualifies,
  InvalidPlan,
  SpecError,
  Unachievable,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::IoError: return "IoError";
    case Errc::InvalidMatrix: return "InvalidMatrix";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::ParseError: return "ParseError";
    case Errc::MissingBasePair: return "MissingBasePair";
    case Errc::SampleCountMismatch: return "SampleCountMismatch";
    case Errc::DuplicateEntry: return "DuplicateEntry";
    case Errc::RowMismatch: return "RowMismatch";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::NoSharedFeatures: return "NoSharedFeatures";
    case Errc::DegenerateVector: return "DegenerateVector";
    case Errc::InvalidCoordinate: return "InvalidCoordinate";
    case Errc::UnknownLanguage: return "UnknownLanguage";
    case Errc::InvalidTree: return "InvalidTree";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ConstantInput: return "ConstantInput";
    case Errc::DomainError: return "DomainError";
    case Errc::NonConvergence: return "NonConvergence";
    case Errc::MissingDistance: return "MissingDistance";
    case Errc::TooFewPairs: return "TooFewPairs";
    case Errc::NoLayerQualifies: return "NoLayerQualifies";
    case Errc::InvalidPlan: return "InvalidPlan";
    case Errc::SpecError: return "SpecError";
    case Errc::Unachievable: return "Unachievable";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` identifies the condition,
/// `what()` carries the human-readable context (file, pair, layer).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace xferscope
