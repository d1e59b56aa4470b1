#pragma once

#include <stdexcept>
#include <string>

namespace ivat {

// Error taxonomy shared by the whole library. The CLI maps kinds to exit
// codes: numeric aborts exit 2, everything else listed here exits 1.
enum class ErrorKind {
  config,
  value,
  schema,
  dimension,
  numeric,
  contract,
  state,
  index,
  checkpoint,
  encoding,
  io,
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::value: return "value";
    case ErrorKind::schema: return "schema";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::contract: return "contract";
    case ErrorKind::state: return "state";
    case ErrorKind::index: return "index";
    case ErrorKind::checkpoint: return "checkpoint";
    case ErrorKind::encoding: return "encoding";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + " error: " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace ivat
