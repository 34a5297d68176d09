#pragma once

#include "fpss/matching.hpp"
#include "fpss/proposal.hpp"
#include "fpss/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace fpss {

enum class StrategyKind { VisualOnly, PromptMatcher, ProbabilityMerging, ClusterMerging, Selection };

std::string_view to_string(StrategyKind kind) noexcept;
/// Accepts the CLI spellings: visual, promptmatcher, prob-merge, cluster-merge, select.
StrategyKind parse_strategy(std::string_view text);

struct FusionParams {
    MatchParams match;
    double selection_iou_threshold = 0.20; // --selection-iou; the TP branch needs a strictly greater gate
    bool merged_mass_check = true;         // --mass-check; extra rejection test for prob-merge
};

struct FusionStrategy {
    StrategyKind kind = StrategyKind::VisualOnly;
    bool with_lisa_mask = false;
    FusionParams params;
};

/// Feature-level inputs of one episode. Everything is borrowed.
struct Episode {
    const FeatureMap& ref_feats;
    const BinaryMask& ref_mask;
    const FeatureMap& targ_feats;
    GridShape image; // target pixel extent, which the decoder and tp masks share
    std::uint64_t seed = 0;
};

/// Outputs of the text-prompted model. Which ones are needed depends on the strategy.
struct TextPromptInputs {
    std::optional<BinaryMask> tp_mask;           // target image
    std::optional<RealGrid> tp_logits;           // target, any resolution
    std::optional<BinaryMask> tp_mask_reference; // reference image, for Selection
};

enum class Branch { VisualBranch, TextBranch };

std::string_view to_string(Branch branch) noexcept;

struct EpisodeDiagnostics {
    std::size_t prototypes = 0;
    std::size_t retained_cells = 0;
    std::size_t vp_clusters = 0;
    std::size_t tp_clusters = 0;
    std::size_t uncovered_clusters = 0;
    std::size_t duplicate_proposals = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t mass_rejected = 0;
    bool empty_reference_after_downsample = false;
    std::optional<double> selection_gate;
};

struct EpisodeResult {
    BinaryMask final_mask;
    std::vector<JudgedProposal> proposals;
    std::vector<PointCluster> clusters; // clusters the proposals were decoded from, VP first
    std::optional<Branch> branch_taken; // Selection only
    EpisodeDiagnostics diagnostics;
};

EpisodeResult run_visual_only(const Episode& episode, const DecoderBackend& decoder, const FusionParams& params);

/// Visual pipeline with `tp_mask` appended as a TextBranch proposal before rejection.
EpisodeResult run_promptmatcher(const Episode& episode, const DecoderBackend& decoder, const BinaryMask& tp_mask,
                                const FusionParams& params);

EpisodeResult run_probability_merging(const Episode& episode, const DecoderBackend& decoder,
                                      const RealGrid& tp_logits, const FusionParams& params,
                                      const BinaryMask* tp_mask = nullptr);

EpisodeResult run_cluster_merging(const Episode& episode, const DecoderBackend& decoder, const RealGrid& tp_logits,
                                  const FusionParams& params, const BinaryMask* tp_mask = nullptr);

/// TP mask when IoU(tp_mask_reference, ref_mask) exceeds the threshold, otherwise the visual result
/// (PromptMatcher when `with_lisa_mask`).
EpisodeResult run_selection(const Episode& episode, const DecoderBackend& decoder, const BinaryMask& tp_mask_target,
                            const BinaryMask& tp_mask_reference, const FusionParams& params, bool with_lisa_mask);

/// Dispatches on the strategy. Throws InvalidArgument if a required text-prompt input is absent and
/// MissingReferenceTPMask when Selection has no reference TP mask.
EpisodeResult run_strategy(const FusionStrategy& strategy, const Episode& episode, const DecoderBackend& decoder,
                           const TextPromptInputs& tp);

/// renormalize(a + b). Throws ZeroMass when both are zero, DimensionMismatch on shape mismatch.
ProbabilityMap merge_probability_maps(const ProbabilityMap& vp, const ProbabilityMap& tp);

/// The `count` highest-mass cells with mass strictly above `floor` (ties row-major).
BinaryMask retain_top_cells(const ProbabilityMap& map, std::size_t count, double floor = 0.0);

/// Number of cells with similarity >= threshold.
std::size_t retention_count(const SimilarityGrid& similarity, double threshold);

} // namespace fpss
