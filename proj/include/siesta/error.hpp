#pragma once

#include <stdexcept>
#include <string>

namespace siesta {

// Exit-code category carried by every library error; the CLI maps it to a
// process status.
enum class ErrorCategory : int {
  config = 2,
  usage = 3,
  data = 4,
  numerical = 5,
  io = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

/// Invalid configuration or shape mismatch detected before any work is done.
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};

/// API misuse: stale tapes, out-of-range indices, empty inputs.
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorCategory::usage, w) {}
};

/// Corrupted or malformed stored data (bad magic, truncation, invalid codes).
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorCategory::data, w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error(ErrorCategory::numerical, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::io, w) {}
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numerical: return "numerical";
    case ErrorCategory::io: return "io";
  }
  return "unknown";
}

}  // namespace siesta
