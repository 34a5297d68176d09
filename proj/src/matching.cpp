#include "fpss/matching.hpp"

#include "fpss/error.hpp"
#include "fpss/ingest.hpp"

#include <Eigen/Core>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace fpss {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Cell vectors of `features` at `indices`, each scaled to unit length (zero rows stay zero).
RowMatrix unit_rows(const FeatureMap& features, std::span<const std::size_t> indices) {
    const std::size_t depth = features.depth();
    RowMatrix out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(depth));
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto cell = features.cell(indices[r]);
        double sq = 0.0;
        for (float v : cell) {
            sq += static_cast<double>(v) * v;
        }
        const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
        for (std::size_t c = 0; c < depth; ++c) {
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cell[c] * inv;
        }
    }
    return out;
}

RowMatrix unit_rows(const FeatureMap& features) {
    std::vector<std::size_t> all(features.cells());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return unit_rows(features, all);
}

// Ascending indices of a seeded uniform subsample of size min(n, cap).
std::vector<std::size_t> subsample(std::vector<std::size_t> items, std::size_t cap, std::uint64_t seed) {
    if (items.size() <= cap) {
        return items;
    }
    std::mt19937_64 engine(seed);
    for (std::size_t i = 0; i < cap; ++i) {
        const auto j = i + uniform_below(engine, items.size() - i);
        std::swap(items[i], items[j]);
    }
    items.resize(cap);
    std::sort(items.begin(), items.end());
    return items;
}

std::vector<std::size_t> foreground_cells(const BinaryMask& mask) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.shape().cells(); ++i) {
        if (mask.at(i)) {
            out.push_back(i);
        }
    }
    return out;
}

std::size_t chebyshev(const PointPrompt& a, const PointPrompt& b) noexcept {
    const std::size_t dy = a.y > b.y ? a.y - b.y : b.y - a.y;
    const std::size_t dx = a.x > b.x ? a.x - b.x : b.x - a.x;
    return std::max(dy, dx);
}

bool row_major_before(const PointPrompt& a, const PointPrompt& b) noexcept {
    return a.y != b.y ? a.y < b.y : a.x < b.x;
}

// Nearest-neighbour matcher from target cells back into the reference grid.
class BackwardMatcher {
  public:
    BackwardMatcher(const FeatureMap& targ_feats, const FeatureMap& ref_feats, const BinaryMask& ref_mask)
        : targ_(targ_feats), ref_units_(unit_rows(ref_feats)),
          ref_inside_(resample_nearest(ref_mask, ref_feats.shape())) {
        if (targ_feats.depth() != ref_feats.depth()) {
            throw Error(ErrorCode::DepthMismatch, "target depth " + std::to_string(targ_feats.depth()) +
                                                      " vs reference depth " + std::to_string(ref_feats.depth()));
        }
    }

    double score(const BinaryMask& proposal, std::size_t cap, std::uint64_t seed) const {
        const BinaryMask on_grid = resample_nearest(proposal, targ_.shape());
        auto cells = foreground_cells(on_grid);
        if (cells.empty()) {
            throw Error(ErrorCode::EmptyProposalAfterDownsample, "proposal vanishes on the feature grid");
        }
        cells = subsample(std::move(cells), cap, seed);
        const RowMatrix queries = unit_rows(targ_, cells);
        const RowMatrix sims = queries * ref_units_.transpose();
        std::size_t inside = 0;
        for (Eigen::Index r = 0; r < sims.rows(); ++r) {
            Eigen::Index best = 0;
            for (Eigen::Index c = 1; c < sims.cols(); ++c) {
                if (sims(r, c) > sims(r, best)) {
                    best = c;
                }
            }
            inside += ref_inside_.at(static_cast<std::size_t>(best)) ? 1 : 0;
        }
        return static_cast<double>(inside) / static_cast<double>(cells.size());
    }

  private:
    const FeatureMap& targ_;
    RowMatrix ref_units_;
    BinaryMask ref_inside_;
};

} // namespace

void validate(const MatchParams& p) {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
    if (!(p.temperature > 0.0) || !std::isfinite(p.temperature)) fail("tau must be positive");
    if (!(p.threshold > -1.0 && p.threshold < 1.0)) fail("theta must lie in (-1, 1)");
    if (p.link_radius < 1) fail("link radius must be at least 1");
    if (p.points_per_cluster < 1) fail("points per cluster must be at least 1");
    if (p.prototype_cap < 1) fail("prototype cap must be at least 1");
    if (!(p.consistency >= 0.0 && p.consistency <= 1.0)) fail("rho must lie in [0, 1]");
    if (!(p.max_area_frac > 0.0 && p.max_area_frac <= 1.0)) fail("max area fraction must lie in (0, 1]");
}

PrototypeSet build_prototypes(const FeatureMap& ref_feats, const BinaryMask& ref_mask, std::size_t cap,
                              std::uint64_t seed) {
    if (cap == 0) {
        throw Error(ErrorCode::InvalidArgument, "prototype cap must be at least 1");
    }
    const BinaryMask on_grid = resample_nearest(ref_mask, ref_feats.shape());
    std::vector<std::size_t> cells;
    for (std::size_t i : foreground_cells(on_grid)) {
        const auto v = ref_feats.cell(i);
        if (std::any_of(v.begin(), v.end(), [](float f) { return f != 0.0f; })) {
            cells.push_back(i);
        }
    }
    if (cells.empty()) {
        throw Error(ErrorCode::EmptyMaskAfterDownsample,
                    "reference mask covers no nonzero feature cell on the " + std::to_string(ref_feats.height()) +
                        "x" + std::to_string(ref_feats.width()) + " grid");
    }
    cells = subsample(std::move(cells), cap, seed);

    PrototypeSet set;
    set.dim = ref_feats.depth();
    set.max_count = cap;
    const RowMatrix units = unit_rows(ref_feats, cells);
    set.vectors.assign(units.data(), units.data() + units.size());
    for (std::size_t i : cells) {
        set.source_cells.push_back({i / ref_feats.width(), i % ref_feats.width()});
    }
    return set;
}

ForwardMatch forward_match(const PrototypeSet& prototypes, const FeatureMap& targ_feats, double temperature) {
    if (prototypes.dim != targ_feats.depth()) {
        throw Error(ErrorCode::DepthMismatch, "prototype dimension " + std::to_string(prototypes.dim) +
                                                  " vs target depth " + std::to_string(targ_feats.depth()));
    }
    if (prototypes.size() == 0) {
        throw Error(ErrorCode::InvalidArgument, "forward matching needs at least one prototype");
    }
    const RowMatrix targets = unit_rows(targ_feats);
    const Eigen::Map<const RowMatrix> protos(prototypes.vectors.data(), static_cast<Eigen::Index>(prototypes.size()),
                                             static_cast<Eigen::Index>(prototypes.dim));
    const RowMatrix sims = targets * protos.transpose();
    const Eigen::VectorXd best = sims.rowwise().maxCoeff();

    RealGrid similarity(targ_feats.height(), targ_feats.width());
    for (std::size_t i = 0; i < targ_feats.cells(); ++i) {
        similarity.data()[i] = std::clamp(best(static_cast<Eigen::Index>(i)), -1.0, 1.0);
    }
    ProbabilityMap probability = spatial_softmax(similarity, temperature);
    return {std::move(similarity), std::move(probability)};
}

std::vector<PointCluster> cluster_cells(const RealGrid& scores, const BinaryMask& retained, std::size_t link_radius,
                                        std::size_t points_per_cluster) {
    if (scores.shape() != retained.shape()) {
        throw Error(ErrorCode::DimensionMismatch, "score grid and retained-cell mask differ in shape");
    }
    if (link_radius < 1 || points_per_cluster < 1) {
        throw Error(ErrorCode::InvalidArgument, "link radius and points per cluster must be at least 1");
    }
    const std::size_t h = scores.height();
    const std::size_t w = scores.width();
    const auto r = static_cast<std::ptrdiff_t>(link_radius);
    std::vector<std::uint8_t> seen(h * w, 0);
    std::vector<PointCluster> clusters;
    std::vector<std::size_t> stack;

    for (std::size_t start = 0; start < h * w; ++start) {
        if (!retained.at(start) || seen[start]) {
            continue;
        }
        PointCluster cluster;
        seen[start] = 1;
        stack.assign(1, start);
        while (!stack.empty()) {
            const std::size_t idx = stack.back();
            stack.pop_back();
            const auto cy = static_cast<std::ptrdiff_t>(idx / w);
            const auto cx = static_cast<std::ptrdiff_t>(idx % w);
            cluster.members.push_back({static_cast<std::size_t>(cx), static_cast<std::size_t>(cy), scores.data()[idx]});
            for (auto y = std::max<std::ptrdiff_t>(0, cy - r); y <= std::min<std::ptrdiff_t>(h - 1, cy + r); ++y) {
                for (auto x = std::max<std::ptrdiff_t>(0, cx - r); x <= std::min<std::ptrdiff_t>(w - 1, cx + r);
                     ++x) {
                    const auto n = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
                    if (retained.at(n) && !seen[n]) {
                        seen[n] = 1;
                        stack.push_back(n);
                    }
                }
            }
        }
        std::sort(cluster.members.begin(), cluster.members.end(), row_major_before);

        double sy = 0.0;
        double sx = 0.0;
        cluster.peak = cluster.members.front();
        for (const auto& m : cluster.members) {
            sy += static_cast<double>(m.y);
            sx += static_cast<double>(m.x);
            if (m.score > cluster.peak.score) {
                cluster.peak = m;
            }
        }
        cluster.centroid_y = sy / static_cast<double>(cluster.members.size());
        cluster.centroid_x = sx / static_cast<double>(cluster.members.size());

        auto ranked = cluster.members;
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const PointPrompt& a, const PointPrompt& b) { return a.score > b.score; });
        for (const auto& candidate : ranked) {
            if (cluster.prompts.size() == points_per_cluster) {
                break;
            }
            const bool spread = std::all_of(cluster.prompts.begin(), cluster.prompts.end(),
                                            [&](const PointPrompt& p) { return chebyshev(p, candidate) >= 2; });
            if (spread) {
                cluster.prompts.push_back(candidate);
            }
        }
        clusters.push_back(std::move(cluster));
    }

    std::stable_sort(clusters.begin(), clusters.end(), [](const PointCluster& a, const PointCluster& b) {
        if (a.peak.score != b.peak.score) {
            return a.peak.score > b.peak.score;
        }
        return row_major_before(a.peak, b.peak);
    });
    return clusters;
}

std::vector<PointCluster> sample_and_cluster(const SimilarityGrid& similarity, double threshold,
                                             std::size_t link_radius, std::size_t points_per_cluster) {
    if (!(threshold > -1.0 && threshold < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "threshold must lie in (-1, 1)");
    }
    BinaryMask retained(similarity.height(), similarity.width());
    for (std::size_t y = 0; y < similarity.height(); ++y) {
        for (std::size_t x = 0; x < similarity.width(); ++x) {
            retained.set(y, x, similarity.at(y, x) >= threshold);
        }
    }
    return cluster_cells(similarity, retained, link_radius, points_per_cluster);
}

double backward_score(const BinaryMask& proposal, const FeatureMap& targ_feats, const FeatureMap& ref_feats,
                      const BinaryMask& ref_mask, std::size_t cap, std::uint64_t seed) {
    return BackwardMatcher(targ_feats, ref_feats, ref_mask).score(proposal, cap, seed);
}

std::string_view to_string(RejectReason reason) noexcept {
    switch (reason) {
    case RejectReason::Pass: return "Pass";
    case RejectReason::BackwardInconsistent: return "BackwardInconsistent";
    case RejectReason::TooSmall: return "TooSmall";
    case RejectReason::TooLarge: return "TooLarge";
    }
    return "Unknown";
}

RejectionContext make_rejection_context(const FeatureMap& ref_feats, const FeatureMap& targ_feats,
                                        const BinaryMask& ref_mask, const MatchParams& params, std::uint64_t seed) {
    return RejectionContext{ref_feats,        targ_feats,           ref_mask,
                            params.consistency, params.min_area,    params.max_area_frac,
                            params.prototype_cap, seed};
}

std::vector<JudgedProposal> reject_masks(std::vector<MaskProposal> proposals, const RejectionContext& ctx) {
    const BackwardMatcher matcher(ctx.targ_feats, ctx.ref_feats, ctx.ref_mask);
    std::vector<JudgedProposal> out;
    out.reserve(proposals.size());
    for (auto& proposal : proposals) {
        RejectionVerdict verdict;
        const auto area = static_cast<double>(proposal.mask.area());
        const auto pixels = static_cast<double>(proposal.mask.shape().cells());
        if (area < static_cast<double>(ctx.min_area)) {
            verdict.reason = RejectReason::TooSmall;
        } else if (area > ctx.max_area_frac * pixels) {
            verdict.reason = RejectReason::TooLarge;
        } else {
            try {
                verdict.score = matcher.score(proposal.mask, ctx.cap, ctx.seed);
                verdict.reason =
                    verdict.score < ctx.consistency ? RejectReason::BackwardInconsistent : RejectReason::Pass;
            } catch (const Error& e) {
                spdlog::debug("backward check failed for {} proposal: {}", to_string(proposal.source), e.what());
                verdict.score = 0.0;
                verdict.reason = RejectReason::BackwardInconsistent;
            }
        }
        verdict.accepted = verdict.reason == RejectReason::Pass;
        out.push_back({std::move(proposal), verdict});
    }
    return out;
}

} // namespace fpss
