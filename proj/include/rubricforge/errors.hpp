#pragma once

#include <stdexcept>
#include <string>

namespace rforge {

// Error taxonomy shared across the library. The CLI maps kinds to exit
// codes: config -> 2, io -> 3, transport exhaustion -> 4.
enum class ErrorKind {
  config,
  io,
  transport,
  protocol,
  decode,
  contract,
  schema,
  template_render,
  validation,
  parse,
  scoring,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::string message)
      : Error(ErrorKind::config, std::move(message)) {}
};

class IoError : public Error {
 public:
  explicit IoError(std::string message)
      : Error(ErrorKind::io, std::move(message)) {}
};

// Transient transport failure (connection error, timeout, HTTP 429/5xx).
// Carries the last observed HTTP status, 0 when no response was received.
class TransportError : public Error {
 public:
  TransportError(std::string message, int last_status, int attempts)
      : Error(ErrorKind::transport, std::move(message)),
        last_status_(last_status),
        attempts_(attempts) {}

  int last_status() const noexcept { return last_status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int last_status_;
  int attempts_;
};

// Non-retryable protocol-level rejection (4xx other than 429).
class ProtocolError : public Error {
 public:
  ProtocolError(std::string message, int status)
      : Error(ErrorKind::protocol, std::move(message)), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

// Malformed response body or unextractable JSON.
class DecodeError : public Error {
 public:
  explicit DecodeError(std::string message)
      : Error(ErrorKind::decode, std::move(message)) {}
};

// Precondition violation on a kernel or pipeline call.
class ContractError : public Error {
 public:
  explicit ContractError(std::string message)
      : Error(ErrorKind::contract, std::move(message)) {}
};

// A model reply violated a stage's output schema. Carries the offending field.
class SchemaError : public Error {
 public:
  SchemaError(std::string message, std::string field)
      : Error(ErrorKind::schema, std::move(message)), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class TemplateError : public Error {
 public:
  explicit TemplateError(std::string message)
      : Error(ErrorKind::template_render, std::move(message)) {}
};

// Domain-type invariant violation at construction time.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::string message)
      : Error(ErrorKind::validation, std::move(message)) {}
};

// File-format parse failure; line is 1-based, 0 when not line-addressable.
class ParseError : public Error {
 public:
  ParseError(std::string message, std::size_t line)
      : Error(ErrorKind::parse, std::move(message)), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A judge call failed while scoring one response; no partial reward exists.
class ScoringError : public Error {
 public:
  explicit ScoringError(std::string message)
      : Error(ErrorKind::scoring, std::move(message)) {}
};

}  // namespace rforge
