#pragma once

#include <stdexcept>
#include <string>

namespace topick {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input record. `line` is 1-based; 0 when not line-oriented.
class FormatError : public Error {
  public:
    FormatError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + (line ? ":" + std::to_string(line) : std::string{}) + ": " + what),
          line_(line)
    {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

class DimensionMismatch : public Error {
  public:
    using Error::Error;
};

class DuplicateId : public Error {
  public:
    using Error::Error;
};

class UnknownId : public Error {
  public:
    using Error::Error;
};

class OutOfRange : public Error {
  public:
    using Error::Error;
};

/// A prerequisite stage artifact is absent.
class MissingArtifact : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Network or endpoint failure after retries were exhausted.
class TransportError : public Error {
  public:
    using Error::Error;
};

}  // namespace topick
