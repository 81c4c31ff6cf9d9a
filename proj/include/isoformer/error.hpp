// Typed errors shared by every module; the CLI maps codes to exit status.
#pragma once

#include <stdexcept>
#include <string>

namespace isoformer {

enum class Errc {
  // tokenization
  empty_sequence,
  illegal_character,
  k_too_large,
  contains_unknown,
  // encoder / aggregation / model
  invalid_config,
  sequence_too_long,
  id_out_of_range,
  shape_mismatch,
  no_modality_present,
  io_failure,
  corrupt_checkpoint,
  // data
  parse_error,
  missing_sequence,
  negative_expression,
  too_few_genes,
  // training / metrics
  degenerate_targets,
  empty_dataset,
  non_finite_loss,
  // analysis
  mask_length_mismatch,
  grid_mismatch,
  insufficient_samples,
  interval_out_of_bounds,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::empty_sequence: return "EmptySequence";
    case Errc::illegal_character: return "IllegalCharacter";
    case Errc::k_too_large: return "KTooLarge";
    case Errc::contains_unknown: return "ContainsUnknown";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::sequence_too_long: return "SequenceTooLong";
    case Errc::id_out_of_range: return "IdOutOfRange";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::no_modality_present: return "NoModalityPresent";
    case Errc::io_failure: return "IoFailure";
    case Errc::corrupt_checkpoint: return "CorruptCheckpoint";
    case Errc::parse_error: return "ParseError";
    case Errc::missing_sequence: return "MissingSequence";
    case Errc::negative_expression: return "NegativeExpression";
    case Errc::too_few_genes: return "TooFewGenes";
    case Errc::degenerate_targets: return "DegenerateTargets";
    case Errc::empty_dataset: return "EmptyDataset";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::mask_length_mismatch: return "MaskLengthMismatch";
    case Errc::grid_mismatch: return "GridMismatch";
    case Errc::insufficient_samples: return "InsufficientSamples";
    case Errc::interval_out_of_bounds: return "IntervalOutOfBounds";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

inline void require(bool ok, Errc code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace isoformer
