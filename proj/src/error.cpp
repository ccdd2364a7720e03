#include "epgn/error.hpp"

namespace epgn {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Provenance: return "provenance";
    case ErrorKind::Batch: return "batch";
    case ErrorKind::Data: return "data";
    case ErrorKind::Split: return "split";
    case ErrorKind::EmptyClassSet: return "empty-class-set";
    case ErrorKind::MissingFile: return "missing-file";
    case ErrorKind::HeaderMismatch: return "header-mismatch";
    case ErrorKind::LabelRange: return "label-range";
    case ErrorKind::OverlappingSplit: return "overlapping-split";
    case ErrorKind::Io: return "io";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
      return 1;
    case ErrorKind::Numeric:
      return 3;
    default:
      return 2;
  }
}

}  // namespace epgn
