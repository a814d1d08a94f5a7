#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace edgedistill {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but numerically degenerate (zero row, zero vector).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Dataset contents are inconsistent (bad label, empty curation result).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Configuration file or flag could not be interpreted.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced non-finite values or collapsed embeddings.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Binary file is malformed; carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }
  /// Message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string detail_;
  std::uint64_t offset_;
};

}  // namespace edgedistill
