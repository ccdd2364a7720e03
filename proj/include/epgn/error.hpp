#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace epgn {

enum class ErrorKind {
  Dimension,
  Numeric,
  Contract,
  Provenance,
  Batch,
  Data,
  Split,
  EmptyClassSet,
  MissingFile,
  HeaderMismatch,
  LabelRange,
  OverlappingSplit,
  Io,
  Usage,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit code for a failure of the given kind: 1 usage, 2 data, 3 numeric.
int exit_code_for(ErrorKind kind);

}  // namespace epgn
