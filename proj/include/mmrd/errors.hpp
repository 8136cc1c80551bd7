#pragma once

#include <stdexcept>
#include <string>

namespace mmrd {

/// Failure classes, ordered by the process exit code the CLI maps them to.
enum class ErrorKind {
  Parse = 2,       ///< malformed input data (CSV structure, non-numeric cells, ...)
  Design = 3,      ///< invalid design or configuration (schema, windowing, rank, usage)
  Infeasible = 4,  ///< the weight program has no feasible point
  Solver = 5,      ///< the numerical solver failed to reach the requested quality
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Design: return "design";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Solver: return "solver";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_parse(const std::string& msg) { throw Error(ErrorKind::Parse, msg); }
[[noreturn]] inline void fail_design(const std::string& msg) { throw Error(ErrorKind::Design, msg); }
[[noreturn]] inline void fail_infeasible(const std::string& msg) { throw Error(ErrorKind::Infeasible, msg); }
[[noreturn]] inline void fail_solver(const std::string& msg) { throw Error(ErrorKind::Solver, msg); }

}  // namespace mmrd
