#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wbc {

enum class ErrorKind {
  kEmptyCytoplasm,
  kInvalidBox,
  kDimensionMismatch,
  kDegenerateAugment,
  kSchemaMismatch,
  kMissingFile,
  kCorruptMask,
  kClassTooSmall,
  kNonFiniteCost,
  kTooManyObjects,
  kInvalidConfig,
  kDimensionError,
  kNoDetection,
  kEmptyInput,
  kSingleClassLabels,
  kVocabularyMismatch,
  kDiverged,
  kInvalidArgument,
  kIo,
};

std::string_view error_kind_name(ErrorKind kind);

// Every recoverable failure in the library surfaces as this exception; the
// kind is stable and is what callers (and tests) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace wbc
