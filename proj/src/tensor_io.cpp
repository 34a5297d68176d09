#include "fpss/tensor_io.hpp"

#include "fpss/error.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace fpss {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {0x46, 0x50, 0x53, 0x53};
constexpr std::size_t kFixedHeader = 7;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 0; shift < 32; shift += 8) {
        out.push_back(static_cast<std::uint8_t>(v >> shift));
    }
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | bytes[offset + static_cast<std::size_t>(i)];
    }
    return v;
}

void put_f32(std::vector<std::uint8_t>& out, float value) {
    put_u32(out, std::bit_cast<std::uint32_t>(value));
}

std::uint32_t checked_dim(std::size_t v) {
    if (v == 0 || v > 0xFFFFFFFFu) {
        throw Error(ErrorCode::InvalidArgument, "tensor dimension out of range: " + std::to_string(v));
    }
    return static_cast<std::uint32_t>(v);
}

std::vector<std::uint8_t> header(DType dtype, std::initializer_list<std::size_t> dims) {
    std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
    out.push_back(kTensorVersion);
    out.push_back(static_cast<std::uint8_t>(dtype));
    out.push_back(static_cast<std::uint8_t>(dims.size()));
    for (std::size_t d : dims) {
        put_u32(out, checked_dim(d));
    }
    return out;
}

std::vector<std::uint8_t> encode_reals(std::size_t h, std::size_t w, std::span<const double> values) {
    auto out = header(DType::F32, {h, w});
    out.reserve(out.size() + values.size() * 4);
    for (double v : values) {
        put_f32(out, static_cast<float>(v));
    }
    return out;
}

std::vector<float> decode_f32(std::span<const std::uint8_t> payload) {
    std::vector<float> out(payload.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::bit_cast<float>(get_u32(payload, i * 4));
        if (!std::isfinite(out[i])) {
            throw Error(ErrorCode::NonFiniteValue, "payload value " + std::to_string(i) + " is not finite");
        }
    }
    return out;
}

template <typename T>
T expect_kind(AnyTensor tensor, const std::filesystem::path& path, const char* kind) {
    if (auto* v = std::get_if<T>(&tensor)) {
        return std::move(*v);
    }
    throw Error(ErrorCode::SchemaViolation, path.string() + " does not hold a " + kind);
}

struct RawTensor {
    DType dtype;
    std::vector<std::size_t> dims;
    std::span<const std::uint8_t> payload;
};

RawTensor parse_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw Error(ErrorCode::MagicMismatch, "missing FPSS magic");
    }
    if (bytes.size() < kFixedHeader) {
        throw Error(ErrorCode::TruncatedPayload, "header ends before ndim field");
    }
    if (bytes[4] != kTensorVersion) {
        throw Error(ErrorCode::UnsupportedVersion, "version " + std::to_string(bytes[4]));
    }
    const std::uint8_t dtype = bytes[5];
    const std::uint8_t ndim = bytes[6];
    if (dtype > 1) {
        throw Error(ErrorCode::UnsupportedVersion, "dtype code " + std::to_string(dtype));
    }
    if (ndim != 2 && ndim != 3) {
        throw Error(ErrorCode::UnsupportedVersion, "ndim " + std::to_string(ndim));
    }
    const std::size_t header_size = kFixedHeader + 4u * ndim;
    if (bytes.size() < header_size) {
        throw Error(ErrorCode::TruncatedPayload, "header ends inside the dimension list");
    }
    RawTensor raw{static_cast<DType>(dtype), {}, {}};
    std::size_t count = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        raw.dims.push_back(get_u32(bytes, kFixedHeader + 4 * i));
        if (raw.dims.back() == 0) {
            throw Error(ErrorCode::InvalidArgument, "zero-sized dimension");
        }
        count *= raw.dims.back();
    }
    const std::size_t elem = raw.dtype == DType::F32 ? 4 : 1;
    raw.payload = bytes.subspan(header_size);
    if (raw.payload.size() != count * elem) {
        throw Error(ErrorCode::TruncatedPayload, "payload holds " + std::to_string(raw.payload.size()) +
                                                     " bytes, header implies " + std::to_string(count * elem));
    }
    return raw;
}

} // namespace

AnyTensor decode_tensor(std::span<const std::uint8_t> bytes) {
    const RawTensor raw = parse_tensor(bytes);
    const auto& dims = raw.dims;
    if (raw.dtype == DType::F32) {
        auto values = decode_f32(raw.payload);
        if (dims.size() == 3) {
            return FeatureMap(dims[0], dims[1], dims[2], std::move(values));
        }
        return RealGrid(dims[0], dims[1], std::vector<double>(values.begin(), values.end()));
    }
    std::vector<std::uint8_t> bytes_out(raw.payload.begin(), raw.payload.end());
    if (dims.size() == 3) {
        return MaskStack(dims[0], dims[1], dims[2], std::move(bytes_out));
    }
    return BinaryMask(dims[0], dims[1], std::move(bytes_out));
}

LabelMap read_label_map(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const RawTensor raw = parse_tensor(bytes);
    if (raw.dtype != DType::U8 || raw.dims.size() != 2) {
        throw Error(ErrorCode::SchemaViolation, path.string() + " does not hold a u8 (H, W) label map");
    }
    return LabelMap(raw.dims[0], raw.dims[1], std::vector<std::uint8_t>(raw.payload.begin(), raw.payload.end()));
}

AnyTensor read_tensor(const std::filesystem::path& path) {
    return decode_tensor(read_file_bytes(path));
}

std::vector<std::uint8_t> encode_tensor(const FeatureMap& map) {
    auto out = header(DType::F32, {map.height(), map.width(), map.depth()});
    out.reserve(out.size() + map.data().size() * 4);
    for (float v : map.data()) {
        put_f32(out, v);
    }
    return out;
}

std::vector<std::uint8_t> encode_tensor(const RealGrid& grid) {
    return encode_reals(grid.height(), grid.width(), grid.data());
}

std::vector<std::uint8_t> encode_tensor(const ProbabilityMap& map) {
    return encode_reals(map.height(), map.width(), map.data());
}

std::vector<std::uint8_t> encode_tensor(const BinaryMask& mask) {
    auto out = header(DType::U8, {mask.height(), mask.width()});
    out.insert(out.end(), mask.data().begin(), mask.data().end());
    return out;
}

std::vector<std::uint8_t> encode_tensor(const MaskStack& stack) {
    auto out = header(DType::U8, {stack.count(), stack.height(), stack.width()});
    out.insert(out.end(), stack.data().begin(), stack.data().end());
    return out;
}

std::vector<std::uint8_t> encode_tensor(const LabelMap& labels) {
    auto out = header(DType::U8, {labels.height(), labels.width()});
    out.insert(out.end(), labels.data().begin(), labels.data().end());
    return out;
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const T& tensor) {
    write_file_bytes(path, encode_tensor(tensor));
}

template void write_tensor(const std::filesystem::path&, const FeatureMap&);
template void write_tensor(const std::filesystem::path&, const RealGrid&);
template void write_tensor(const std::filesystem::path&, const ProbabilityMap&);
template void write_tensor(const std::filesystem::path&, const BinaryMask&);
template void write_tensor(const std::filesystem::path&, const MaskStack&);
template void write_tensor(const std::filesystem::path&, const LabelMap&);

FeatureMap read_feature_map(const std::filesystem::path& path) {
    return expect_kind<FeatureMap>(read_tensor(path), path, "f32 (H, W, D) feature map");
}

BinaryMask read_mask(const std::filesystem::path& path) {
    if (path.extension() == ".pgm") {
        return read_pgm(path);
    }
    return expect_kind<BinaryMask>(read_tensor(path), path, "u8 (H, W) mask");
}

RealGrid read_real_grid(const std::filesystem::path& path) {
    return expect_kind<RealGrid>(read_tensor(path), path, "f32 (H, W) grid");
}

MaskStack read_mask_stack(const std::filesystem::path& path) {
    return expect_kind<MaskStack>(read_tensor(path), path, "u8 (N, H, W) mask stack");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::IoFailure, "short write to " + path.string());
    }
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') {
                ++pos;
            }
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string token;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
        token.push_back(static_cast<char>(bytes[pos++]));
    }
    if (token.empty()) {
        throw Error(ErrorCode::TruncatedPayload, "PGM header ended early");
    }
    return token;
}

std::size_t pgm_number(std::span<const std::uint8_t> bytes, std::size_t& pos) {
    const std::string token = pgm_token(bytes, pos);
    std::size_t value = 0;
    for (char c : token) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw Error(ErrorCode::SchemaViolation, "malformed PGM header field '" + token + "'");
        }
        value = value * 10 + static_cast<std::size_t>(c - '0');
    }
    return value;
}

} // namespace

BinaryMask read_pgm(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const std::span<const std::uint8_t> view(bytes);
    std::size_t pos = 0;
    if (pgm_token(view, pos) != "P5") {
        throw Error(ErrorCode::MagicMismatch, path.string() + " is not a binary PGM");
    }
    const std::size_t width = pgm_number(view, pos);
    const std::size_t height = pgm_number(view, pos);
    const std::size_t maxval = pgm_number(view, pos);
    if (width == 0 || height == 0) {
        throw Error(ErrorCode::InvalidArgument, "PGM with zero extent");
    }
    if (maxval == 0 || maxval > 255) {
        throw Error(ErrorCode::UnsupportedVersion, "PGM maxval " + std::to_string(maxval));
    }
    ++pos; // single whitespace byte after maxval
    if (bytes.size() < pos || bytes.size() - pos != width * height) {
        throw Error(ErrorCode::TruncatedPayload, path.string() + ": PGM raster size mismatch");
    }
    return BinaryMask(height, width, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end()));
}

void write_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
    std::ostringstream head;
    head << "P5\n" << mask.width() << ' ' << mask.height() << "\n255\n";
    const std::string h = head.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.reserve(out.size() + mask.data().size());
    for (auto v : mask.data()) {
        out.push_back(v ? 255 : 0);
    }
    write_file_bytes(path, out);
}

} // namespace fpss
