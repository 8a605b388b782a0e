#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ser {

enum class ErrorCode {
  FileNotFound,
  UnsupportedFormat,
  UnsupportedSampleRate,
  EmptyClip,
  IoError,
  FormatError,
  InvalidLength,
  NonFiniteInput,
  ShapeMismatch,
  BatchTooSmall,
  LabelOutOfRange,
  NotScalar,
  AlreadyConsumed,
  KernelTooLarge,
  InvalidConfig,
  VariantLacksDecoder,
  VariantTermMismatch,
  NonFiniteGradient,
  InsufficientSessions,
  InsufficientSpeakers,
  MissingFeature,
  DivergedLoss,
  EmptyEvaluationSet,
  EmptyClass,
  PerplexityTooLarge,
  DegenerateClass,
  ParseError,
  UsageError,
};

std::string_view to_string(ErrorCode code);

/// Domain error carrying a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ser
