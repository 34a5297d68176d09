#pragma once

#include "fpss/mask_proposal.hpp"
#include "fpss/matching.hpp"
#include "fpss/tensor.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace fpss {

/// Feature grid the prompt points index, and the pixel extent of the target image.
struct TargetContext {
    GridShape feature_grid;
    GridShape image;
};

/// Pixel sampled at the centre of a feature cell.
Cell cell_to_pixel(const PointPrompt& point, const TargetContext& ctx) noexcept;

enum class DecoderKind { RegionOracle, ProposalBank, External };

/// Promptable mask decoder. Implementations are immutable after construction.
class DecoderBackend {
  public:
    virtual ~DecoderBackend() = default;
    virtual DecoderKind kind() const noexcept = 0;
    /// Mask for a set of point prompts. Throws PointOutOfBounds or NoCoveringProposal.
    virtual MaskProposal decode(std::span<const PointPrompt> points, const TargetContext& ctx) const = 0;
};

/// Test decoder: answers with the connected region (4-connected, equal label) of a label map that
/// contains most of the prompt points.
class RegionOracleDecoder final : public DecoderBackend {
  public:
    explicit RegionOracleDecoder(LabelMap labels);
    static RegionOracleDecoder load(const std::filesystem::path& path);

    DecoderKind kind() const noexcept override { return DecoderKind::RegionOracle; }
    MaskProposal decode(std::span<const PointPrompt> points, const TargetContext& ctx) const override;

    GridShape shape() const noexcept { return {height_, width_}; }
    std::size_t component_count() const noexcept { return component_count_; }
    /// 0 for background, otherwise 1-based component id.
    std::size_t component_at(std::size_t y, std::size_t x) const noexcept { return components_[y * width_ + x]; }

  private:
    std::size_t height_;
    std::size_t width_;
    std::vector<std::size_t> components_;
    std::size_t component_count_ = 0;
};

/// Precomputed candidate masks (e.g. an "everything" sweep of a promptable decoder). Answers with the
/// candidate covering the most prompt points; ties go to the higher stored score, then file order.
class ProposalBankDecoder final : public DecoderBackend {
  public:
    ProposalBankDecoder(MaskStack candidates, std::vector<double> scores);
    /// Reads the (N, H, W) u8 stack and its `<path>.json` sidecar `{"scores": [...]}`.
    static ProposalBankDecoder load(const std::filesystem::path& path);

    DecoderKind kind() const noexcept override { return DecoderKind::ProposalBank; }
    MaskProposal decode(std::span<const PointPrompt> points, const TargetContext& ctx) const override;

    GridShape shape() const noexcept { return {candidates_.height(), candidates_.width()}; }
    std::size_t size() const noexcept { return candidates_.count(); }

  private:
    MaskStack candidates_;
    std::vector<double> scores_;
};

/// Placeholder for a decoder running outside this process; every call raises InvalidArgument.
class ExternalDecoder final : public DecoderBackend {
  public:
    DecoderKind kind() const noexcept override { return DecoderKind::External; }
    MaskProposal decode(std::span<const PointPrompt> points, const TargetContext& ctx) const override;
};

struct DecodeAllResult {
    std::vector<MaskProposal> proposals;
    std::size_t uncovered = 0;  // clusters that produced NoCoveringProposal
    std::size_t duplicates = 0; // pixel-identical masks dropped
};

/// One proposal per cluster prompt set, skipping uncovered clusters and pixel-identical repeats.
DecodeAllResult decode_all(const DecoderBackend& backend, std::span<const PointCluster> clusters,
                           const TargetContext& ctx);

} // namespace fpss
