#include "fpss/error.hpp"

namespace fpss {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::UnknownDomain: return "UnknownDomain";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NoEligibleReference: return "NoEligibleReference";
    case ErrorCode::EmptyClassName: return "EmptyClassName";
    case ErrorCode::EmptyMaskAfterDownsample: return "EmptyMaskAfterDownsample";
    case ErrorCode::EmptyProposalAfterDownsample: return "EmptyProposalAfterDownsample";
    case ErrorCode::DepthMismatch: return "DepthMismatch";
    case ErrorCode::PointOutOfBounds: return "PointOutOfBounds";
    case ErrorCode::NoCoveringProposal: return "NoCoveringProposal";
    case ErrorCode::MissingReferenceTPMask: return "MissingReferenceTPMask";
    case ErrorCode::NoRecords: return "NoRecords";
    case ErrorCode::DatasetMismatch: return "DatasetMismatch";
    case ErrorCode::AlignmentMismatch: return "AlignmentMismatch";
    }
    return "Unknown";
}

} // namespace fpss
