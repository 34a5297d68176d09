#include "fpss/proposal.hpp"

#include "fpss/error.hpp"
#include "fpss/tensor_io.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <string>

namespace fpss {

std::string_view to_string(ProposalSource source) noexcept {
    return source == ProposalSource::TextBranch ? "TextBranch" : "VisualBranch";
}

Cell cell_to_pixel(const PointPrompt& point, const TargetContext& ctx) noexcept {
    return {nearest_source_index(point.y, ctx.feature_grid.height, ctx.image.height),
            nearest_source_index(point.x, ctx.feature_grid.width, ctx.image.width)};
}

namespace {

std::vector<Cell> prompt_pixels(std::span<const PointPrompt> points, const TargetContext& ctx, GridShape decoder) {
    if (points.empty()) {
        throw Error(ErrorCode::InvalidArgument, "decode needs at least one prompt point");
    }
    if (ctx.image != decoder) {
        throw Error(ErrorCode::DimensionMismatch,
                    "decoder covers " + std::to_string(decoder.height) + "x" + std::to_string(decoder.width) +
                        " pixels, target image is " + std::to_string(ctx.image.height) + "x" +
                        std::to_string(ctx.image.width));
    }
    std::vector<Cell> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        if (p.y >= ctx.feature_grid.height || p.x >= ctx.feature_grid.width) {
            throw Error(ErrorCode::PointOutOfBounds, "point (" + std::to_string(p.y) + ", " + std::to_string(p.x) +
                                                         ") lies outside the feature grid");
        }
        out.push_back(cell_to_pixel(p, ctx));
    }
    return out;
}

} // namespace

RegionOracleDecoder::RegionOracleDecoder(LabelMap labels)
    : height_(labels.height()), width_(labels.width()), components_(labels.height() * labels.width(), 0) {
    std::vector<std::size_t> queue;
    for (std::size_t start = 0; start < components_.size(); ++start) {
        const std::uint8_t label = labels.data()[start];
        if (label == 0 || components_[start] != 0) {
            continue;
        }
        const std::size_t id = ++component_count_;
        components_[start] = id;
        queue.assign(1, start);
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::size_t idx = queue[head];
            const std::size_t y = idx / width_;
            const std::size_t x = idx % width_;
            auto visit = [&](std::size_t n) {
                if (components_[n] == 0 && labels.data()[n] == label) {
                    components_[n] = id;
                    queue.push_back(n);
                }
            };
            if (y > 0) visit(idx - width_);
            if (y + 1 < height_) visit(idx + width_);
            if (x > 0) visit(idx - 1);
            if (x + 1 < width_) visit(idx + 1);
        }
    }
}

RegionOracleDecoder RegionOracleDecoder::load(const std::filesystem::path& path) {
    return RegionOracleDecoder(read_label_map(path));
}

MaskProposal RegionOracleDecoder::decode(std::span<const PointPrompt> points, const TargetContext& ctx) const {
    const auto pixels = prompt_pixels(points, ctx, {height_, width_});
    std::map<std::size_t, std::size_t> votes;
    for (const auto& px : pixels) {
        if (const std::size_t id = component_at(px.y, px.x); id != 0) {
            ++votes[id];
        }
    }
    if (votes.empty()) {
        throw Error(ErrorCode::NoCoveringProposal, "no prompt point falls on a labelled region");
    }
    std::size_t top = 0;
    for (const auto& [id, n] : votes) {
        top = std::max(top, n);
    }
    std::size_t chosen = 0;
    const std::size_t peak_id = component_at(pixels.front().y, pixels.front().x);
    if (peak_id != 0 && votes[peak_id] == top) {
        chosen = peak_id;
    } else {
        for (const auto& [id, n] : votes) {
            if (n == top) {
                chosen = id;
                break;
            }
        }
    }
    BinaryMask mask(height_, width_);
    for (std::size_t i = 0; i < components_.size(); ++i) {
        if (components_[i] == chosen) {
            mask.set(i / width_, i % width_);
        }
    }
    return MaskProposal{std::move(mask), ProposalSource::VisualBranch, {points.begin(), points.end()}, std::nullopt};
}

ProposalBankDecoder::ProposalBankDecoder(MaskStack candidates, std::vector<double> scores)
    : candidates_(std::move(candidates)), scores_(std::move(scores)) {
    if (scores_.size() != candidates_.count()) {
        throw Error(ErrorCode::SchemaViolation, "proposal bank holds " + std::to_string(candidates_.count()) +
                                                    " masks but " + std::to_string(scores_.size()) + " scores");
    }
}

ProposalBankDecoder ProposalBankDecoder::load(const std::filesystem::path& path) {
    MaskStack stack = read_mask_stack(path);
    std::vector<double> scores(stack.count(), 0.0);
    const std::filesystem::path sidecar = path.string() + ".json";
    if (std::filesystem::exists(sidecar)) {
        std::ifstream in(sidecar);
        nlohmann::json doc;
        try {
            in >> doc;
            scores = doc.at("scores").get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::SchemaViolation, sidecar.string() + ": " + e.what());
        }
    }
    return ProposalBankDecoder(std::move(stack), std::move(scores));
}

MaskProposal ProposalBankDecoder::decode(std::span<const PointPrompt> points, const TargetContext& ctx) const {
    const auto pixels = prompt_pixels(points, ctx, {candidates_.height(), candidates_.width()});
    const std::size_t plane = candidates_.height() * candidates_.width();
    std::size_t best = candidates_.count();
    std::size_t best_hits = 0;
    for (std::size_t n = 0; n < candidates_.count(); ++n) {
        const auto slice = candidates_.data().subspan(n * plane, plane);
        std::size_t hits = 0;
        for (const auto& px : pixels) {
            hits += slice[px.y * candidates_.width() + px.x] != 0 ? 1 : 0;
        }
        if (hits == 0) {
            continue;
        }
        if (hits > best_hits || (hits == best_hits && scores_[n] > scores_[best])) {
            best = n;
            best_hits = hits;
        }
    }
    if (best == candidates_.count()) {
        throw Error(ErrorCode::NoCoveringProposal, "no bank candidate contains any prompt point");
    }
    return MaskProposal{candidates_.slice(best), ProposalSource::VisualBranch, {points.begin(), points.end()},
                        scores_[best]};
}

MaskProposal ExternalDecoder::decode(std::span<const PointPrompt>, const TargetContext&) const {
    throw Error(ErrorCode::InvalidArgument, "the external decoder runs out of process and is not available here");
}

DecodeAllResult decode_all(const DecoderBackend& backend, std::span<const PointCluster> clusters,
                           const TargetContext& ctx) {
    DecodeAllResult out;
    for (const auto& cluster : clusters) {
        MaskProposal proposal;
        try {
            proposal = backend.decode(cluster.prompts, ctx);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoCoveringProposal) {
                throw;
            }
            spdlog::debug("cluster at ({}, {}) skipped: {}", cluster.peak.y, cluster.peak.x, e.what());
            ++out.uncovered;
            continue;
        }
        const bool repeat = std::any_of(out.proposals.begin(), out.proposals.end(),
                                        [&](const MaskProposal& p) { return p.mask == proposal.mask; });
        if (repeat) {
            ++out.duplicates;
            continue;
        }
        out.proposals.push_back(std::move(proposal));
    }
    return out;
}

} // namespace fpss
