#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sacodec {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary input (.sact, checkpoint, codebook). Carries the byte
// offset at which decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// A stored checksum does not match the content it guards.
class ChecksumError : public Error {
 public:
  using Error::Error;
};

// Two configurations that must agree do not.
class ConfigMismatch : public Error {
 public:
  using Error::Error;
};

// Non-finite value in a forward pass or a loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace sacodec
