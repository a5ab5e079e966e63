#pragma once

#include <stdexcept>
#include <string>

namespace affect {

/// Error families. Each maps to a distinct CLI exit code.
enum class ErrorKind {
  kInvalidArgument,  // bad parameters or precondition violations
  kConfig,           // unusable configuration file or flags
  kIo,               // missing or unreadable/unwritable files, malformed CSV
  kAlignment,        // tracks that must line up do not
  kTaskMismatch,     // label file does not fit the task
  kNumerical,        // singular systems and similar
};

int exit_code(ErrorKind kind);
const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

/// Prefixes the message of an Error with the pipeline stage that raised it.
Error with_stage(const Error& err, const std::string& stage);

}  // namespace affect
