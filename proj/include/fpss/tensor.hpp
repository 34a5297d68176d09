#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fpss {

struct GridShape {
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t cells() const noexcept { return height * width; }
    friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Location on a cell grid together with the similarity observed there.
struct PointPrompt {
    std::size_t x = 0;
    std::size_t y = 0;
    double score = 0.0;

    friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

/// Dense H x W x D grid of patch descriptors, row-major (y, x, c).
class FeatureMap {
  public:
    FeatureMap(std::size_t height, std::size_t width, std::size_t depth, std::vector<float> data);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t depth() const noexcept { return depth_; }
    GridShape shape() const noexcept { return {height_, width_}; }
    std::size_t cells() const noexcept { return height_ * width_; }

    std::span<const float> data() const noexcept { return data_; }
    std::span<const float> cell(std::size_t y, std::size_t x) const noexcept {
        return std::span<const float>(data_).subspan((y * width_ + x) * depth_, depth_);
    }
    std::span<const float> cell(std::size_t index) const noexcept {
        return std::span<const float>(data_).subspan(index * depth_, depth_);
    }

  private:
    std::size_t height_;
    std::size_t width_;
    std::size_t depth_;
    std::vector<float> data_;
};

/// H x W foreground indicator. Stored as 0/1 bytes.
class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(std::size_t height, std::size_t width, bool fill = false);
    BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    GridShape shape() const noexcept { return {height_, width_}; }

    bool at(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x] != 0; }
    bool at(std::size_t index) const noexcept { return data_[index] != 0; }
    void set(std::size_t y, std::size_t x, bool value = true) noexcept {
        data_[y * width_ + x] = value ? 1 : 0;
    }
    /// Sets every pixel of the half-open rectangle [y0, y1) x [x0, x1).
    void fill_rect(std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1, bool value = true);

    std::size_t area() const noexcept;
    std::span<const std::uint8_t> data() const noexcept { return data_; }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

  private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<std::uint8_t> data_;
};

/// Real-valued H x W grid: similarity grids, logits.
class RealGrid {
  public:
    RealGrid() = default;
    RealGrid(std::size_t height, std::size_t width, double fill = 0.0);
    RealGrid(std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    GridShape shape() const noexcept { return {height_, width_}; }

    double at(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x]; }
    double& at(std::size_t y, std::size_t x) noexcept { return data_[y * width_ + x]; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

  private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

using SimilarityGrid = RealGrid;

/// H x W grid of small integer labels; 0 is background.
class LabelMap {
  public:
    LabelMap(std::size_t height, std::size_t width, std::vector<std::uint8_t> labels);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    GridShape shape() const noexcept { return {height_, width_}; }
    std::uint8_t at(std::size_t y, std::size_t x) const noexcept { return labels_[y * width_ + x]; }
    std::span<const std::uint8_t> data() const noexcept { return labels_; }

  private:
    std::size_t height_;
    std::size_t width_;
    std::vector<std::uint8_t> labels_;
};

/// Nonnegative finite H x W grid. Sums to one after `renormalize`.
class ProbabilityMap {
  public:
    ProbabilityMap(std::size_t height, std::size_t width, std::vector<double> data);

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    GridShape shape() const noexcept { return {height_, width_}; }

    double at(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x]; }
    std::span<const double> data() const noexcept { return data_; }
    double total() const noexcept;

  private:
    std::size_t height_;
    std::size_t width_;
    std::vector<double> data_;
};

/// N candidate masks of identical H x W shape.
class MaskStack {
  public:
    MaskStack(std::size_t count, std::size_t height, std::size_t width, std::vector<std::uint8_t> data);
    explicit MaskStack(const std::vector<BinaryMask>& masks);

    std::size_t count() const noexcept { return count_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    BinaryMask slice(std::size_t index) const;
    std::span<const std::uint8_t> data() const noexcept { return data_; }

  private:
    std::size_t count_;
    std::size_t height_;
    std::size_t width_;
    std::vector<std::uint8_t> data_;
};

struct NormalizedFeatures {
    FeatureMap map;
    std::size_t zero_norm_cells = 0;
};

/// Divides every cell vector by its L2 norm. Zero-norm cells stay zero and are counted.
NormalizedFeatures normalize_l2(const FeatureMap& features);

/// Scales a nonnegative map to unit total mass. Throws ZeroMass when every entry is zero.
ProbabilityMap renormalize(const ProbabilityMap& map);

/// Softmax over all cells of `logits / temperature`.
ProbabilityMap spatial_softmax(const RealGrid& logits, double temperature = 1.0);

/// Pixel-wise OR. An empty list yields an all-false mask of `shape`.
BinaryMask mask_union(std::span<const BinaryMask> masks, GridShape shape);

/// Nearest-neighbour resampling; each destination cell samples the source at its centre.
BinaryMask resample_nearest(const BinaryMask& mask, GridShape target);
RealGrid resample_nearest(const RealGrid& grid, GridShape target);

/// Source index sampled by destination index `dst` under centre-aligned nearest neighbour.
std::size_t nearest_source_index(std::size_t dst, std::size_t dst_extent, std::size_t src_extent) noexcept;

} // namespace fpss
