#include "fpss/tensor.hpp"

#include "fpss/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fpss {

namespace {

void require_extent(std::size_t value, const char* what) {
    if (value == 0) {
        throw Error(ErrorCode::InvalidArgument, std::string(what) + " must be at least 1");
    }
}

void require_size(std::size_t actual, std::size_t expected, const char* what) {
    if (actual != expected) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::string(what) + ": expected " + std::to_string(expected) + " values, got " +
                        std::to_string(actual));
    }
}

} // namespace

FeatureMap::FeatureMap(std::size_t height, std::size_t width, std::size_t depth, std::vector<float> data)
    : height_(height), width_(width), depth_(depth), data_(std::move(data)) {
    require_extent(height, "feature map height");
    require_extent(width, "feature map width");
    require_extent(depth, "feature map depth");
    require_size(data_.size(), height * width * depth, "feature map");
    for (float v : data_) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteValue, "feature map contains a non-finite value");
        }
    }
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), data_(height * width, fill ? 1 : 0) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data)
    : height_(height), width_(width), data_(std::move(data)) {
    require_size(data_.size(), height * width, "binary mask");
    for (auto& v : data_) {
        v = v != 0 ? 1 : 0;
    }
}

void BinaryMask::fill_rect(std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1, bool value) {
    y1 = std::min(y1, height_);
    x1 = std::min(x1, width_);
    for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
            set(y, x, value);
        }
    }
}

std::size_t BinaryMask::area() const noexcept {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

RealGrid::RealGrid(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), data_(height * width, fill) {}

RealGrid::RealGrid(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
    require_size(data_.size(), height * width, "real grid");
}

LabelMap::LabelMap(std::size_t height, std::size_t width, std::vector<std::uint8_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
    require_size(labels_.size(), height * width, "label map");
}

ProbabilityMap::ProbabilityMap(std::size_t height, std::size_t width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
    require_extent(height, "probability map height");
    require_extent(width, "probability map width");
    require_size(data_.size(), height * width, "probability map");
    for (double v : data_) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteValue, "probability map contains a non-finite value");
        }
        if (v < 0.0) {
            throw Error(ErrorCode::InvalidArgument, "probability map contains a negative value");
        }
    }
}

double ProbabilityMap::total() const noexcept {
    return std::accumulate(data_.begin(), data_.end(), 0.0);
}

MaskStack::MaskStack(std::size_t count, std::size_t height, std::size_t width, std::vector<std::uint8_t> data)
    : count_(count), height_(height), width_(width), data_(std::move(data)) {
    require_size(data_.size(), count * height * width, "mask stack");
    for (auto& v : data_) {
        v = v != 0 ? 1 : 0;
    }
}

MaskStack::MaskStack(const std::vector<BinaryMask>& masks)
    : count_(masks.size()),
      height_(masks.empty() ? 0 : masks.front().height()),
      width_(masks.empty() ? 0 : masks.front().width()) {
    data_.reserve(count_ * height_ * width_);
    for (const auto& m : masks) {
        if (m.height() != height_ || m.width() != width_) {
            throw Error(ErrorCode::DimensionMismatch, "mask stack slices differ in shape");
        }
        data_.insert(data_.end(), m.data().begin(), m.data().end());
    }
}

BinaryMask MaskStack::slice(std::size_t index) const {
    const std::size_t plane = height_ * width_;
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * plane);
    return BinaryMask(height_, width_, std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(plane)));
}

NormalizedFeatures normalize_l2(const FeatureMap& features) {
    const std::size_t depth = features.depth();
    std::vector<float> out(features.data().begin(), features.data().end());
    std::size_t zero_cells = 0;
    for (std::size_t i = 0; i < features.cells(); ++i) {
        auto cell = std::span<float>(out).subspan(i * depth, depth);
        double sq = 0.0;
        for (float v : cell) {
            sq += static_cast<double>(v) * v;
        }
        if (sq == 0.0) {
            ++zero_cells;
            continue;
        }
        const double norm = std::sqrt(sq);
        for (float& v : cell) {
            v = static_cast<float>(v / norm);
        }
    }
    return {FeatureMap(features.height(), features.width(), depth, std::move(out)), zero_cells};
}

ProbabilityMap renormalize(const ProbabilityMap& map) {
    const double mass = map.total();
    if (!(mass > 0.0)) {
        throw Error(ErrorCode::ZeroMass, "cannot renormalize a map with zero total mass");
    }
    std::vector<double> out(map.data().begin(), map.data().end());
    for (double& v : out) {
        v /= mass;
    }
    return ProbabilityMap(map.height(), map.width(), std::move(out));
}

ProbabilityMap spatial_softmax(const RealGrid& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "softmax temperature must be positive");
    }
    if (logits.shape().cells() == 0) {
        throw Error(ErrorCode::InvalidArgument, "softmax over an empty grid");
    }
    const auto values = logits.data();
    const double peak = *std::max_element(values.begin(), values.end());
    std::vector<double> out(values.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = std::exp((values[i] - peak) / temperature);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return ProbabilityMap(logits.height(), logits.width(), std::move(out));
}

BinaryMask mask_union(std::span<const BinaryMask> masks, GridShape shape) {
    if (!masks.empty()) {
        shape = masks.front().shape();
    }
    std::vector<std::uint8_t> out(shape.cells(), 0);
    for (const auto& m : masks) {
        if (m.shape() != shape) {
            throw Error(ErrorCode::DimensionMismatch, "mask_union over masks of different shapes");
        }
        const auto src = m.data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] |= src[i];
        }
    }
    return BinaryMask(shape.height, shape.width, std::move(out));
}

std::size_t nearest_source_index(std::size_t dst, std::size_t dst_extent, std::size_t src_extent) noexcept {
    return ((2 * dst + 1) * src_extent) / (2 * dst_extent);
}

BinaryMask resample_nearest(const BinaryMask& mask, GridShape target) {
    if (mask.shape() == target) {
        return mask;
    }
    BinaryMask out(target.height, target.width);
    for (std::size_t y = 0; y < target.height; ++y) {
        const std::size_t sy = nearest_source_index(y, target.height, mask.height());
        for (std::size_t x = 0; x < target.width; ++x) {
            const std::size_t sx = nearest_source_index(x, target.width, mask.width());
            out.set(y, x, mask.at(sy, sx));
        }
    }
    return out;
}

RealGrid resample_nearest(const RealGrid& grid, GridShape target) {
    if (grid.shape() == target) {
        return grid;
    }
    RealGrid out(target.height, target.width);
    for (std::size_t y = 0; y < target.height; ++y) {
        const std::size_t sy = nearest_source_index(y, target.height, grid.height());
        for (std::size_t x = 0; x < target.width; ++x) {
            out.at(y, x) = grid.at(sy, nearest_source_index(x, target.width, grid.width()));
        }
    }
    return out;
}

} // namespace fpss
