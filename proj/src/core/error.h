#pragma once

#include <stdexcept>
#include <string>

namespace nvs {

// Dimension or broadcast mismatches. Message names the offending shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// A documented precondition was violated by the caller.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem problems; message carries the path.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents (manifest, image, checkpoint).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint version mismatch; message carries both versions.
struct VersionError : FormatError {
  explicit VersionError(const std::string& msg) : FormatError(msg) {}
};

// Non-finite values where finiteness is part of the contract.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace nvs
