#pragma once

#include <stdexcept>
#include <string>

namespace convqr {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message) : std::runtime_error(message) {}
};

// Input file / record violates a documented schema or invariant.
class DataError : public Error {
 public:
  using Error::Error;
};

// Chat transport failed after exhausting retries.
class TransportError : public Error {
 public:
  using Error::Error;
};

// A model response yielded zero parseable candidates.
class ParseEmptyError : public Error {
 public:
  ParseEmptyError(const std::string& message, std::string raw)
      : Error(message), raw_text(std::move(raw)) {}

  std::string raw_text;
};

// A judge response had no recognizable verdict.
class JudgeParseError : public Error {
 public:
  using Error::Error;
};

// Pipeline configuration failed validation; `field` is the JSON path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field_path, const std::string& message)
      : Error(field_path + ": " + message), field(std::move(field_path)) {}

  std::string field;
};

// A pipeline stage was invoked before its inputs exist.
class StageOrderError : public Error {
 public:
  StageOrderError(const std::string& message, std::string run_first)
      : Error(message), missing_stage(std::move(run_first)) {}

  std::string missing_stage;
};

}  // namespace convqr
