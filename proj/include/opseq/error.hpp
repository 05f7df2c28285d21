#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace opseq {

enum class ErrorCode {
  kOddHexLength,
  kNonHexCharacter,
  kUnknownMnemonic,
  kIndexOutOfRange,
  kEmptyClass,
  kEmptyCorpus,
  kDuplicateSequence,
  kTooFewSamples,
  kTargetTooLarge,
  kInvalidArgument,
  kDimensionMismatch,
  kLengthMismatch,
  kShapeMismatch,
  kStaleCache,
  kUndefinedMetric,
  kSingleClass,
  kCheckpointLoadFailure,
  kParseError,
  kIoError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOddHexLength: return "OddHexLength";
    case ErrorCode::kNonHexCharacter: return "NonHexCharacter";
    case ErrorCode::kUnknownMnemonic: return "UnknownMnemonic";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kDuplicateSequence: return "DuplicateSequence";
    case ErrorCode::kTooFewSamples: return "TooFewSamples";
    case ErrorCode::kTargetTooLarge: return "TargetTooLarge";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kStaleCache: return "StaleCache";
    case ErrorCode::kUndefinedMetric: return "UndefinedMetric";
    case ErrorCode::kSingleClass: return "SingleClass";
    case ErrorCode::kCheckpointLoadFailure: return "CheckpointLoadFailure";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `position()` carries a byte offset or
/// line number when the failing input has one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> position = std::nullopt)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(message),
        position_(position) {}

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> position() const noexcept { return position_; }
  // what() without the leading code name.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
  std::optional<std::size_t> position_;
};

// Input errors are the caller's fault (bad file, bad flag); everything else is
// an internal failure. The CLI maps these to exit codes 1 and 2.
constexpr bool is_input_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kStaleCache:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kDimensionMismatch:
      return false;
    default:
      return true;
  }
}

}  // namespace opseq
