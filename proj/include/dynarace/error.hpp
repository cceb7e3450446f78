#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dynarace {

enum class ErrorCode {
  kTooFewWaypoints,
  kDuplicateWaypoint,
  kNonPositiveSpacing,
  kOutOfRangeArcLength,
  kNonFiniteState,
  kActorFailure,
  kDimensionMismatch,
  kEmptyDataset,
  kEmptyEnsemble,
  kInsufficientRealData,
  kEmptyBatch,
  kAllBuffersEmpty,
  kBadMagic,
  kLengthMismatch,
  kCrcMismatch,
  kUnknownType,
  kMalformedPayload,
  kProtocolVersion,
  kConnectionLost,
  kStorageFailure,
  kEmptySnapshot,
  kBadCheckpoint,
  kBadConfig,
  kBadFormat,
};

std::string_view error_name(ErrorCode code);

// Every failure the library reports carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTooFewWaypoints: return "TooFewWaypoints";
    case ErrorCode::kDuplicateWaypoint: return "DuplicateWaypoint";
    case ErrorCode::kNonPositiveSpacing: return "NonPositiveSpacing";
    case ErrorCode::kOutOfRangeArcLength: return "OutOfRangeArcLength";
    case ErrorCode::kNonFiniteState: return "NonFiniteState";
    case ErrorCode::kActorFailure: return "ActorFailure";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kEmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::kInsufficientRealData: return "InsufficientRealData";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kAllBuffersEmpty: return "AllBuffersEmpty";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kCrcMismatch: return "CrcMismatch";
    case ErrorCode::kUnknownType: return "UnknownType";
    case ErrorCode::kMalformedPayload: return "MalformedPayload";
    case ErrorCode::kProtocolVersion: return "ProtocolVersion";
    case ErrorCode::kConnectionLost: return "ConnectionLost";
    case ErrorCode::kStorageFailure: return "StorageFailure";
    case ErrorCode::kEmptySnapshot: return "EmptySnapshot";
    case ErrorCode::kBadCheckpoint: return "BadCheckpoint";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kBadFormat: return "BadFormat";
  }
  return "Unknown";
}

}  // namespace dynarace
