#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cdseg {

enum class ErrorKind {
  kShapeMismatch,
  kDomain,
  kResolution,
  kDegenerateInput,
  kFormat,
  kCorruption,
  kVersion,
  kStructureMismatch,
  kValidation,
  kIo,
  kUsage,
  kDivergence,
  kConfig,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-readable kind,
/// which the CLI prints as `error=<kind> detail=<text>`.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& detail) {
  throw Error(kind, detail);
}

}  // namespace cdseg
