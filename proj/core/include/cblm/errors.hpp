#pragma once

#include <stdexcept>
#include <string>

namespace cblm {

// Machine-readable error categories. The CLI maps these to JSON error
// records; library code throws the typed subclasses below.
enum class ErrorCode {
  invalid_sequence,
  format_error,
  nothing_to_mask,
  invalid_profile,
  length_error,
  missing_concepts,
  empty_loss,
  degenerate_concept,
  empty_after_filter,
  divergence,
  corrupt_checkpoint,
  unsupported_concept,
  variant_mismatch,
  io_error,
  config_error,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

#define CBLM_DEFINE_ERROR(NAME, CODE)                 \
  class NAME : public Error {                         \
   public:                                            \
    explicit NAME(const std::string& what)            \
        : Error(ErrorCode::CODE, what) {}             \
  }

CBLM_DEFINE_ERROR(InvalidSequenceError, invalid_sequence);
CBLM_DEFINE_ERROR(FormatError, format_error);
CBLM_DEFINE_ERROR(NothingToMaskError, nothing_to_mask);
CBLM_DEFINE_ERROR(InvalidProfileError, invalid_profile);
CBLM_DEFINE_ERROR(LengthError, length_error);
CBLM_DEFINE_ERROR(MissingConceptsError, missing_concepts);
CBLM_DEFINE_ERROR(EmptyLossError, empty_loss);
CBLM_DEFINE_ERROR(DegenerateConceptError, degenerate_concept);
CBLM_DEFINE_ERROR(EmptyAfterFilterError, empty_after_filter);
CBLM_DEFINE_ERROR(DivergenceError, divergence);
CBLM_DEFINE_ERROR(CorruptCheckpointError, corrupt_checkpoint);
CBLM_DEFINE_ERROR(UnsupportedConceptError, unsupported_concept);
CBLM_DEFINE_ERROR(VariantError, variant_mismatch);
CBLM_DEFINE_ERROR(IoError, io_error);
CBLM_DEFINE_ERROR(ConfigError, config_error);

#undef CBLM_DEFINE_ERROR

}  // namespace cblm
