#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lur {

/// Base class for all library errors, so the CLI can map them to exit codes.
class Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An operation's preconditions were violated (bad shape, non-finite input).
class InvalidInputError : public Error {
  using Error::Error;
};

/// A label or index is out of range.
class IndexError : public Error {
  using Error::Error;
};

/// A file does not match its declared format.
class FormatError : public Error {
  using Error::Error;
};

/// A numeric routine could not produce a valid result.
class NumericError : public Error {
  using Error::Error;
};

/// Training produced a non-finite loss or update.
class TrainingDivergedError : public Error {
 public:
  TrainingDivergedError(const std::string& what, std::uint32_t epoch)
      : Error(what), epoch_(epoch) {}

  std::uint32_t epoch() const noexcept { return epoch_; }

 private:
  std::uint32_t epoch_;
};

}  // namespace lur
