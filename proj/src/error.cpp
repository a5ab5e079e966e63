#include "affect/error.hpp"

namespace affect {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return 2;
    case ErrorKind::kConfig: return 3;
    case ErrorKind::kIo: return 4;
    case ErrorKind::kAlignment: return 5;
    case ErrorKind::kTaskMismatch: return 6;
    case ErrorKind::kNumerical: return 7;
  }
  return 1;
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kAlignment: return "alignment error";
    case ErrorKind::kTaskMismatch: return "task mismatch";
    case ErrorKind::kNumerical: return "numerical error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

Error with_stage(const Error& err, const std::string& stage) {
  return Error(err.kind(), "[" + stage + "] " + err.what());
}

}  // namespace affect
