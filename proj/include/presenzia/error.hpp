#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace presenzia {

enum class ErrorCode {
  DegenerateVector,
  EmptyBatch,
  BackendUnavailable,
  InvalidImage,
  InvalidCrop,
  NoPositivePairs,
  NoNegatives,
  DegenerateCalibration,
  AlreadyEnrolled,
  NotEnrolled,
  AlreadyExists,
  NotFound,
  EnrollmentFailed,
  ValidationError,
  PermissionDenied,
  Unauthenticated,
  SessionExists,
  SessionNotActive,
  InvalidSpan,
  DeadLettered,
  DatasetError,
  IoError,
  StorageError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateVector: return "DegenerateVector";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::InvalidImage: return "InvalidImage";
    case ErrorCode::InvalidCrop: return "InvalidCrop";
    case ErrorCode::NoPositivePairs: return "NoPositivePairs";
    case ErrorCode::NoNegatives: return "NoNegatives";
    case ErrorCode::DegenerateCalibration: return "DegenerateCalibration";
    case ErrorCode::AlreadyEnrolled: return "AlreadyEnrolled";
    case ErrorCode::NotEnrolled: return "NotEnrolled";
    case ErrorCode::AlreadyExists: return "AlreadyExists";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::EnrollmentFailed: return "EnrollmentFailed";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::PermissionDenied: return "PermissionDenied";
    case ErrorCode::Unauthenticated: return "Unauthenticated";
    case ErrorCode::SessionExists: return "SessionExists";
    case ErrorCode::SessionNotActive: return "SessionNotActive";
    case ErrorCode::InvalidSpan: return "InvalidSpan";
    case ErrorCode::DeadLettered: return "DeadLettered";
    case ErrorCode::DatasetError: return "DatasetError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::StorageError: return "StorageError";
  }
  return "Unknown";
}

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace presenzia
