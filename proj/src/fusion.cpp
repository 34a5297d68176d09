#include "fpss/fusion.hpp"

#include "fpss/error.hpp"
#include "fpss/eval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>
#include <string>

namespace fpss {

std::string_view to_string(StrategyKind kind) noexcept {
    switch (kind) {
    case StrategyKind::VisualOnly: return "visual";
    case StrategyKind::PromptMatcher: return "promptmatcher";
    case StrategyKind::ProbabilityMerging: return "prob-merge";
    case StrategyKind::ClusterMerging: return "cluster-merge";
    case StrategyKind::Selection: return "select";
    }
    return "visual";
}

StrategyKind parse_strategy(std::string_view text) {
    for (StrategyKind k : {StrategyKind::VisualOnly, StrategyKind::PromptMatcher, StrategyKind::ProbabilityMerging,
                           StrategyKind::ClusterMerging, StrategyKind::Selection}) {
        if (to_string(k) == text) {
            return k;
        }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(text) + "'");
}

std::string_view to_string(Branch branch) noexcept {
    return branch == Branch::TextBranch ? "TextBranch" : "VisualBranch";
}

ProbabilityMap merge_probability_maps(const ProbabilityMap& vp, const ProbabilityMap& tp) {
    if (vp.shape() != tp.shape()) {
        throw Error(ErrorCode::DimensionMismatch, "probability maps differ in shape");
    }
    std::vector<double> sum(vp.data().size());
    for (std::size_t i = 0; i < sum.size(); ++i) {
        sum[i] = vp.data()[i] + tp.data()[i];
    }
    return renormalize(ProbabilityMap(vp.height(), vp.width(), std::move(sum)));
}

BinaryMask retain_top_cells(const ProbabilityMap& map, std::size_t count, double floor) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < map.data().size(); ++i) {
        if (map.data()[i] > floor) {
            order.push_back(i);
        }
    }
    const std::size_t keep = std::min(count, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double va = map.data()[a];
                          const double vb = map.data()[b];
                          return va > vb || (va == vb && a < b);
                      });
    BinaryMask out(map.height(), map.width());
    for (std::size_t i = 0; i < keep; ++i) {
        out.set(order[i] / map.width(), order[i] % map.width());
    }
    return out;
}

std::size_t retention_count(const SimilarityGrid& similarity, double threshold) {
    return static_cast<std::size_t>(
        std::count_if(similarity.data().begin(), similarity.data().end(), [&](double s) { return s >= threshold; }));
}

namespace {

struct VisualStage {
    std::optional<ForwardMatch> forward; // absent when the reference mask vanishes on the grid
    std::vector<PointCluster> clusters;
};

VisualStage visual_stage(const Episode& ep, const FusionParams& params, EpisodeDiagnostics& diag) {
    validate(params.match);
    VisualStage out;
    PrototypeSet prototypes;
    try {
        prototypes = build_prototypes(ep.ref_feats, ep.ref_mask, params.match.prototype_cap, ep.seed);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyMaskAfterDownsample) {
            throw;
        }
        spdlog::debug("episode seed {}: {}", ep.seed, e.what());
        diag.empty_reference_after_downsample = true;
        return out;
    }
    diag.prototypes = prototypes.size();
    out.forward = forward_match(prototypes, ep.targ_feats, params.match.temperature);
    out.clusters = sample_and_cluster(out.forward->similarity, params.match.threshold, params.match.link_radius,
                                      params.match.points_per_cluster);
    diag.retained_cells = retention_count(out.forward->similarity, params.match.threshold);
    diag.vp_clusters = out.clusters.size();
    return out;
}

TargetContext target_context(const Episode& ep) {
    return {ep.targ_feats.shape(), ep.image};
}

void check_tp_mask(const BinaryMask& tp_mask, const Episode& ep) {
    if (tp_mask.shape() != ep.image) {
        throw Error(ErrorCode::DimensionMismatch, "text-prompt mask does not match the target image");
    }
}

std::vector<MaskProposal> decode_clusters(const DecoderBackend& decoder, std::span<const PointCluster> clusters,
                                          const Episode& ep, EpisodeDiagnostics& diag) {
    auto decoded = decode_all(decoder, clusters, target_context(ep));
    diag.uncovered_clusters = decoded.uncovered;
    diag.duplicate_proposals = decoded.duplicates;
    return std::move(decoded.proposals);
}

// Rejection and union. A TextBranch proposal, when given, goes first.
void finish(EpisodeResult& result, std::vector<MaskProposal> proposals, const Episode& ep,
            const FusionParams& params, const BinaryMask* tp_mask) {
    if (tp_mask != nullptr) {
        proposals.insert(proposals.begin(), text_branch_proposal(*tp_mask));
    }
    const auto ctx = make_rejection_context(ep.ref_feats, ep.targ_feats, ep.ref_mask, params.match, ep.seed);
    result.proposals = reject_masks(std::move(proposals), ctx);
}

void unite_accepted(EpisodeResult& result, GridShape image) {
    std::vector<BinaryMask> accepted;
    for (const auto& jp : result.proposals) {
        if (jp.verdict.accepted) {
            accepted.push_back(jp.proposal.mask);
        }
    }
    result.diagnostics.accepted = accepted.size();
    result.diagnostics.rejected = result.proposals.size() - accepted.size();
    result.final_mask = mask_union(accepted, image);
}

ProbabilityMap text_probability(const RealGrid& tp_logits, GridShape grid) {
    return spatial_softmax(resample_nearest(tp_logits, grid), 1.0);
}

RealGrid as_scores(const ProbabilityMap& map) {
    return RealGrid(map.height(), map.width(), std::vector<double>(map.data().begin(), map.data().end()));
}

} // namespace

EpisodeResult run_visual_only(const Episode& episode, const DecoderBackend& decoder, const FusionParams& params) {
    EpisodeResult result;
    auto stage = visual_stage(episode, params, result.diagnostics);
    auto proposals = decode_clusters(decoder, stage.clusters, episode, result.diagnostics);
    result.clusters = std::move(stage.clusters);
    finish(result, std::move(proposals), episode, params, nullptr);
    unite_accepted(result, episode.image);
    return result;
}

EpisodeResult run_promptmatcher(const Episode& episode, const DecoderBackend& decoder, const BinaryMask& tp_mask,
                                const FusionParams& params) {
    check_tp_mask(tp_mask, episode);
    EpisodeResult result;
    auto stage = visual_stage(episode, params, result.diagnostics);
    auto proposals = decode_clusters(decoder, stage.clusters, episode, result.diagnostics);
    result.clusters = std::move(stage.clusters);
    finish(result, std::move(proposals), episode, params, &tp_mask);
    unite_accepted(result, episode.image);
    return result;
}

EpisodeResult run_probability_merging(const Episode& episode, const DecoderBackend& decoder,
                                      const RealGrid& tp_logits, const FusionParams& params,
                                      const BinaryMask* tp_mask) {
    if (tp_mask != nullptr) {
        check_tp_mask(*tp_mask, episode);
    }
    EpisodeResult result;
    auto stage = visual_stage(episode, params, result.diagnostics);
    const GridShape grid = episode.targ_feats.shape();
    std::optional<ProbabilityMap> merged;
    if (stage.forward) {
        merged = merge_probability_maps(stage.forward->probability, text_probability(tp_logits, grid));
        const std::size_t keep = retention_count(stage.forward->similarity, params.match.threshold);
        const BinaryMask retained = retain_top_cells(*merged, keep);
        result.clusters =
            cluster_cells(as_scores(*merged), retained, params.match.link_radius, params.match.points_per_cluster);
        result.diagnostics.retained_cells = retained.area();
        result.diagnostics.vp_clusters = result.clusters.size();
    }
    auto proposals = decode_clusters(decoder, result.clusters, episode, result.diagnostics);
    finish(result, std::move(proposals), episode, params, tp_mask);

    if (params.merged_mass_check && merged) {
        const double grid_mean = 1.0 / static_cast<double>(grid.cells());
        for (auto& jp : result.proposals) {
            if (!jp.verdict.accepted) {
                continue;
            }
            const BinaryMask down = resample_nearest(jp.proposal.mask, grid);
            double mass = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < grid.cells(); ++i) {
                if (down.at(i)) {
                    mass += merged->data()[i];
                    ++count;
                }
            }
            if (count == 0 || mass / static_cast<double>(count) < grid_mean) {
                jp.verdict.accepted = false;
                jp.verdict.reason = RejectReason::BackwardInconsistent;
                ++result.diagnostics.mass_rejected;
            }
        }
    }
    unite_accepted(result, episode.image);
    return result;
}

EpisodeResult run_cluster_merging(const Episode& episode, const DecoderBackend& decoder, const RealGrid& tp_logits,
                                  const FusionParams& params, const BinaryMask* tp_mask) {
    if (tp_mask != nullptr) {
        check_tp_mask(*tp_mask, episode);
    }
    EpisodeResult result;
    auto stage = visual_stage(episode, params, result.diagnostics);
    const GridShape grid = episode.targ_feats.shape();
    result.clusters = std::move(stage.clusters);
    if (stage.forward) {
        const ProbabilityMap p_tp = text_probability(tp_logits, grid);
        const std::size_t keep = retention_count(stage.forward->similarity, params.match.threshold);
        // Only cells above the uniform level count, so a flat map contributes nothing.
        const double uniform = 1.0 / static_cast<double>(grid.cells());
        const BinaryMask retained = retain_top_cells(p_tp, keep, uniform * (1.0 + 1e-12));
        auto tp_clusters =
            cluster_cells(as_scores(p_tp), retained, params.match.link_radius, params.match.points_per_cluster);
        result.diagnostics.tp_clusters = tp_clusters.size();
        result.clusters.insert(result.clusters.end(), std::make_move_iterator(tp_clusters.begin()),
                               std::make_move_iterator(tp_clusters.end()));
    }
    auto proposals = decode_clusters(decoder, result.clusters, episode, result.diagnostics);
    finish(result, std::move(proposals), episode, params, tp_mask);
    unite_accepted(result, episode.image);
    return result;
}

EpisodeResult run_selection(const Episode& episode, const DecoderBackend& decoder, const BinaryMask& tp_mask_target,
                            const BinaryMask& tp_mask_reference, const FusionParams& params, bool with_lisa_mask) {
    check_tp_mask(tp_mask_target, episode);
    if (!(params.selection_iou_threshold >= 0.0 && params.selection_iou_threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "selection IoU threshold must lie in [0, 1]");
    }
    const double gate = iou(tp_mask_reference, episode.ref_mask);
    if (gate > params.selection_iou_threshold) {
        validate(params.match);
        EpisodeResult result;
        result.final_mask = tp_mask_target;
        result.branch_taken = Branch::TextBranch;
        result.diagnostics.selection_gate = gate;
        return result;
    }
    EpisodeResult result = with_lisa_mask ? run_promptmatcher(episode, decoder, tp_mask_target, params)
                                          : run_visual_only(episode, decoder, params);
    result.branch_taken = Branch::VisualBranch;
    result.diagnostics.selection_gate = gate;
    return result;
}

EpisodeResult run_strategy(const FusionStrategy& strategy, const Episode& episode, const DecoderBackend& decoder,
                           const TextPromptInputs& tp) {
    auto need_mask = [&]() -> const BinaryMask& {
        if (!tp.tp_mask) {
            throw Error(ErrorCode::InvalidArgument,
                        std::string("strategy ") + std::string(to_string(strategy.kind)) + " needs a tp_mask");
        }
        return *tp.tp_mask;
    };
    auto need_logits = [&]() -> const RealGrid& {
        if (!tp.tp_logits) {
            throw Error(ErrorCode::InvalidArgument,
                        std::string("strategy ") + std::string(to_string(strategy.kind)) + " needs tp_logits");
        }
        return *tp.tp_logits;
    };
    const BinaryMask* lisa = nullptr;
    switch (strategy.kind) {
    case StrategyKind::VisualOnly:
        return strategy.with_lisa_mask ? run_promptmatcher(episode, decoder, need_mask(), strategy.params)
                                       : run_visual_only(episode, decoder, strategy.params);
    case StrategyKind::PromptMatcher:
        return run_promptmatcher(episode, decoder, need_mask(), strategy.params);
    case StrategyKind::ProbabilityMerging:
        if (strategy.with_lisa_mask) lisa = &need_mask();
        return run_probability_merging(episode, decoder, need_logits(), strategy.params, lisa);
    case StrategyKind::ClusterMerging:
        if (strategy.with_lisa_mask) lisa = &need_mask();
        return run_cluster_merging(episode, decoder, need_logits(), strategy.params, lisa);
    case StrategyKind::Selection:
        if (!tp.tp_mask_reference) {
            throw Error(ErrorCode::MissingReferenceTPMask, "selection needs the reference image's tp_mask");
        }
        return run_selection(episode, decoder, need_mask(), *tp.tp_mask_reference, strategy.params,
                             strategy.with_lisa_mask);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown strategy");
}

} // namespace fpss
