#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geval {

/// Broad failure classes. The CLI maps each class onto a distinct exit code.
enum class ErrorKind {
  validation,
  precondition,
  config,
  transport,
  credential,
  protocol,
  scripted_miss,
  parse,
  distribution,
  assembly,
  cot_generation,
  ingestion,
  io,
  aggregation,
  report,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::config: return "config";
    case ErrorKind::transport: return "transport";
    case ErrorKind::credential: return "credential";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::scripted_miss: return "scripted_miss";
    case ErrorKind::parse: return "parse";
    case ErrorKind::distribution: return "distribution";
    case ErrorKind::assembly: return "assembly";
    case ErrorKind::cot_generation: return "cot_generation";
    case ErrorKind::ingestion: return "ingestion";
    case ErrorKind::io: return "io";
    case ErrorKind::aggregation: return "aggregation";
    case ErrorKind::report: return "report";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Transport failures know whether a retry could help (429, 5xx, timeouts).
class TransportError : public Error {
 public:
  TransportError(const std::string& message, bool retryable, int http_status = 0)
      : Error(ErrorKind::transport, message),
        retryable_(retryable),
        http_status_(http_status) {}

  bool retryable() const noexcept { return retryable_; }
  int http_status() const noexcept { return http_status_; }

 private:
  bool retryable_;
  int http_status_;
};

/// Parse failures keep the full offending text.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::string text)
      : Error(ErrorKind::parse, message), text_(std::move(text)) {}

  const std::string& text() const noexcept { return text_; }

 private:
  std::string text_;
};

class CotError : public Error {
 public:
  CotError(const std::string& message, std::string raw)
      : Error(ErrorKind::cot_generation, message), raw_(std::move(raw)) {}

  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

}  // namespace geval
