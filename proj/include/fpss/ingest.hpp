#pragma once

#include "fpss/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fpss {

/// The five MESS dataset groups.
enum class Domain { General, Earth, Medical, Engineering, Agriculture };

inline constexpr Domain kAllDomains[] = {Domain::General, Domain::Earth, Domain::Medical, Domain::Engineering,
                                         Domain::Agriculture};

std::string_view to_string(Domain domain) noexcept;
/// Throws UnknownDomain for anything outside the five groups.
Domain parse_domain(std::string_view name);

using ClassId = std::string;

struct ClassEntry {
    ClassId id;
    std::string name;
};

/// One image of a dataset and the files that stand in for model outputs on it.
struct ImageEntry {
    std::string image_id;
    std::filesystem::path feature_path;
    std::map<ClassId, std::filesystem::path> gt_masks;
    std::map<ClassId, std::filesystem::path> tp_masks;
    std::map<ClassId, std::filesystem::path> tp_logits;
    std::optional<std::filesystem::path> proposal_bank;
    std::optional<std::filesystem::path> region_labels;
};

struct DatasetManifest {
    std::string dataset_id;
    Domain domain = Domain::General;
    std::vector<ClassEntry> classes;
    std::vector<ImageEntry> images;

    const ImageEntry* find_image(std::string_view image_id) const noexcept;
    const ClassEntry* find_class(std::string_view class_id) const noexcept;
};

/// Parses and validates a manifest; paths are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir);

/// Ground-truth foreground area per (image_id, class_id).
using GtAreaIndex = std::map<std::pair<std::string, ClassId>, std::size_t>;

/// Reads every ground-truth mask listed in the manifest once.
GtAreaIndex index_gt_areas(const DatasetManifest& manifest);

/// One-shot prompt episode: a target image, a class, and the reference drawn for it.
struct PromptEpisode {
    std::string dataset_id;
    std::string target_id;
    ClassId class_id;
    std::vector<std::string> reference_ids; // exactly one entry in the one-shot protocol
    std::string text_prompt;
    std::uint64_t rng_seed = 0;

    const std::string& reference_id() const { return reference_ids.front(); }
};

/// Draws the reference uniformly among other images whose ground truth contains `class_id`.
PromptEpisode sample_episode(const DatasetManifest& manifest, const GtAreaIndex& areas,
                             std::string_view target_id, const ClassId& class_id, std::uint64_t seed);

/// "Segment all the instances of class <name> in the image".
std::string template_text_prompt(std::string_view class_name);

/// Mixes a global seed with the episode identity into a per-episode seed.
std::uint64_t derive_episode_seed(std::uint64_t global_seed, std::string_view dataset_id,
                                  std::string_view image_id, std::string_view class_id) noexcept;

/// Uniform integer in [0, bound) drawn from a 64-bit engine word stream; bound > 0.
template <typename Engine>
std::uint64_t uniform_below(Engine& engine, std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t draw = engine();
    while (draw >= limit) {
        draw = engine();
    }
    return draw % bound;
}

} // namespace fpss
