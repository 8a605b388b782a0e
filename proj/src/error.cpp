#include "ser/error.hpp"

namespace ser {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::UnsupportedSampleRate: return "UnsupportedSampleRate";
    case ErrorCode::EmptyClip: return "EmptyClip";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::InvalidLength: return "InvalidLength";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::AlreadyConsumed: return "AlreadyConsumed";
    case ErrorCode::KernelTooLarge: return "KernelTooLarge";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::VariantLacksDecoder: return "VariantLacksDecoder";
    case ErrorCode::VariantTermMismatch: return "VariantTermMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::InsufficientSessions: return "InsufficientSessions";
    case ErrorCode::InsufficientSpeakers: return "InsufficientSpeakers";
    case ErrorCode::MissingFeature: return "MissingFeature";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyEvaluationSet: return "EmptyEvaluationSet";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::PerplexityTooLarge: return "PerplexityTooLarge";
    case ErrorCode::DegenerateClass: return "DegenerateClass";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace ser
