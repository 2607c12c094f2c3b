#pragma once

#include <stdexcept>
#include <string>

namespace mqa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (record line, JSON payload, config file).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a domain invariant.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

enum class TransportErrorKind {
  network,       // connection failed or timed out after retries
  auth,          // 401/403
  rate_limited,  // 429 after retries
  server,        // 5xx after retries
  rejected,      // other 4xx
  malformed,     // 2xx with an unusable payload
};

const char* to_string(TransportErrorKind kind) noexcept;

class TransportError : public Error {
 public:
  TransportError(TransportErrorKind kind, const std::string& what, int retries = 0)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind), retries_(retries) {}
  TransportErrorKind kind() const noexcept { return kind_; }
  int retries() const noexcept { return retries_; }

 private:
  TransportErrorKind kind_;
  int retries_;
};

}  // namespace mqa
