// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tbvad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, schema violations, inconsistent dimensions.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// A remote call failed in a way that may succeed on retry.
class RetriableError : public Error {
public:
  RetriableError(const std::string &what, int attempts)
      : Error(what + " (after " + std::to_string(attempts) + " attempt" +
              (attempts == 1 ? "" : "s") + ")"),
        attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

private:
  int attempts_;
};

class CorruptFileError : public Error {
public:
  CorruptFileError(const std::string &what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

} // namespace tbvad
