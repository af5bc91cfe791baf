#include "cblm/errors.hpp"

namespace cblm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_sequence: return "invalid_sequence";
    case ErrorCode::format_error: return "format_error";
    case ErrorCode::nothing_to_mask: return "nothing_to_mask";
    case ErrorCode::invalid_profile: return "invalid_profile";
    case ErrorCode::length_error: return "length_error";
    case ErrorCode::missing_concepts: return "missing_concepts";
    case ErrorCode::empty_loss: return "empty_loss";
    case ErrorCode::degenerate_concept: return "degenerate_concept";
    case ErrorCode::empty_after_filter: return "empty_after_filter";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::corrupt_checkpoint: return "corrupt_checkpoint";
    case ErrorCode::unsupported_concept: return "unsupported_concept";
    case ErrorCode::variant_mismatch: return "variant_mismatch";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::config_error: return "config_error";
  }
  return "unknown";
}

}  // namespace cblm
