#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fpss {

enum class ErrorCode {
    // tensor_core
    MagicMismatch,
    UnsupportedVersion,
    TruncatedPayload,
    NonFiniteValue,
    DimensionMismatch,
    ZeroMass,
    InvalidArgument,
    IoFailure,
    // ingest
    SchemaViolation,
    UnknownDomain,
    DuplicateId,
    NoEligibleReference,
    EmptyClassName,
    // matching
    EmptyMaskAfterDownsample,
    EmptyProposalAfterDownsample,
    DepthMismatch,
    // proposal
    PointOutOfBounds,
    NoCoveringProposal,
    // fusion
    MissingReferenceTPMask,
    // eval
    NoRecords,
    DatasetMismatch,
    AlignmentMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

} // namespace fpss
