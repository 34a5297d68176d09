#pragma once

#include "fpss/mask_proposal.hpp"
#include "fpss/tensor.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace fpss {

/// Matching and rejection thresholds. Every value is exposed as a CLI flag.
struct MatchParams {
    double temperature = 0.1;           // --tau
    double threshold = 0.55;            // --theta, cosine retention threshold
    std::size_t link_radius = 2;        // --link-radius, Chebyshev cells
    std::size_t points_per_cluster = 3; // --points-per-cluster
    std::size_t prototype_cap = 1024;   // --proto-cap
    double consistency = 0.5;           // --rho, minimum backward score
    std::size_t min_area = 16;          // --min-area, pixels
    double max_area_frac = 0.95;        // --max-area-frac
};

/// Throws InvalidArgument naming the first out-of-range field.
void validate(const MatchParams& params);

struct Cell {
    std::size_t y = 0;
    std::size_t x = 0;

    friend bool operator==(const Cell&, const Cell&) = default;
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Unit-norm reference descriptors drawn from inside the reference mask.
struct PrototypeSet {
    std::size_t dim = 0;
    std::vector<double> vectors; // size() * dim, row-major
    std::vector<Cell> source_cells;
    std::size_t max_count = 0;

    std::size_t size() const noexcept { return source_cells.size(); }
    std::span<const double> vector(std::size_t i) const noexcept {
        return std::span<const double>(vectors).subspan(i * dim, dim);
    }
};

/// Collects in-mask reference cells (mask resampled to the feature grid), capped at `cap` by a seeded
/// uniform subsample. Zero-norm cells are skipped.
PrototypeSet build_prototypes(const FeatureMap& ref_feats, const BinaryMask& ref_mask, std::size_t cap,
                              std::uint64_t seed = 0);

struct ForwardMatch {
    SimilarityGrid similarity; // max cosine over prototypes, in [-1, 1]
    ProbabilityMap probability; // softmax of similarity / temperature over all cells
};

ForwardMatch forward_match(const PrototypeSet& prototypes, const FeatureMap& targ_feats, double temperature);

struct PointCluster {
    std::vector<PointPrompt> members; // row-major order
    double centroid_y = 0.0;
    double centroid_x = 0.0;
    PointPrompt peak;
    std::vector<PointPrompt> prompts; // peak first, then spread-out high scorers
};

/// Retains cells with similarity >= threshold and groups them into Chebyshev-linked components.
std::vector<PointCluster> sample_and_cluster(const SimilarityGrid& similarity, double threshold,
                                             std::size_t link_radius, std::size_t points_per_cluster);

/// Clusters an explicit retained set, ranking prompt candidates by `scores`.
std::vector<PointCluster> cluster_cells(const RealGrid& scores, const BinaryMask& retained, std::size_t link_radius,
                                        std::size_t points_per_cluster);

/// Fraction of sampled in-proposal target cells whose nearest reference cell (max cosine over the whole
/// reference grid) lies inside the reference mask.
double backward_score(const BinaryMask& proposal, const FeatureMap& targ_feats, const FeatureMap& ref_feats,
                      const BinaryMask& ref_mask, std::size_t cap, std::uint64_t seed = 0);

enum class RejectReason { Pass, BackwardInconsistent, TooSmall, TooLarge };

std::string_view to_string(RejectReason reason) noexcept;

struct RejectionVerdict {
    double score = 0.0;
    bool accepted = false;
    RejectReason reason = RejectReason::BackwardInconsistent;
};

struct RejectionContext {
    const FeatureMap& ref_feats;
    const FeatureMap& targ_feats;
    const BinaryMask& ref_mask;
    double consistency = 0.5;
    std::size_t min_area = 16;
    double max_area_frac = 0.95;
    std::size_t cap = 1024;
    std::uint64_t seed = 0;
};

RejectionContext make_rejection_context(const FeatureMap& ref_feats, const FeatureMap& targ_feats,
                                        const BinaryMask& ref_mask, const MatchParams& params, std::uint64_t seed);

struct JudgedProposal {
    MaskProposal proposal;
    RejectionVerdict verdict;
};

/// One verdict per proposal, independent of the others.
std::vector<JudgedProposal> reject_masks(std::vector<MaskProposal> proposals, const RejectionContext& context);

} // namespace fpss
