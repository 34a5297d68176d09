#pragma once

#include "fpss/tensor.hpp"

#include <optional>
#include <string_view>
#include <vector>

namespace fpss {

enum class ProposalSource { VisualBranch, TextBranch };

std::string_view to_string(ProposalSource source) noexcept;

/// Candidate mask in target image space. Text-branch proposals carry no prompt points.
struct MaskProposal {
    BinaryMask mask;
    ProposalSource source = ProposalSource::VisualBranch;
    std::vector<PointPrompt> prompt_points;
    std::optional<double> decoder_score;
};

inline MaskProposal text_branch_proposal(BinaryMask mask) {
    return MaskProposal{std::move(mask), ProposalSource::TextBranch, {}, std::nullopt};
}

} // namespace fpss
