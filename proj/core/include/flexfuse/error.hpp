#pragma once

#include <stdexcept>
#include <string>

namespace flexfuse {

/// Base for every error raised by the library. Callers that only need a
/// diagnostic can catch this; callers that branch on the failure kind catch
/// the derived types and inspect code().
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violated by the caller (bad shape, out-of-range step, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

enum class ImageErrc {
  missing_file,
  unsupported_format,
  unsupported_bit_depth,
  corrupt_header,
  corrupt_payload,
  write_failed,
};

class ImageError : public Error {
 public:
  ImageError(ImageErrc code, const std::string& what) : Error(what), code_(code) {}
  ImageErrc code() const noexcept { return code_; }

 private:
  ImageErrc code_;
};

enum class CheckpointErrc {
  io,
  bad_magic,
  version_skew,
  truncated,
  shape_mismatch,
  config_mismatch,
  unknown_tensor,
};

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what) : Error(what), code_(code) {}
  CheckpointErrc code() const noexcept { return code_; }

 private:
  CheckpointErrc code_;
};

/// Raised when a numerical pipeline produces NaN/Inf or an inconsistent result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace flexfuse
