#include "fpss/ingest.hpp"

#include "fpss/error.hpp"
#include "fpss/tensor_io.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace fpss {

namespace {

using nlohmann::json;

[[noreturn]] void schema(const std::string& what) {
    throw Error(ErrorCode::SchemaViolation, what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        schema(where + ": missing key '" + key + "'");
    }
    return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
    const json& v = require(obj, key, where);
    if (!v.is_string() || v.get_ref<const std::string&>().empty()) {
        schema(where + ": '" + key + "' must be a nonempty string");
    }
    return v.get<std::string>();
}

ClassId class_id_of(const json& v, const std::string& where) {
    if (v.is_string() && !v.get_ref<const std::string&>().empty()) {
        return v.get<std::string>();
    }
    if (v.is_number_integer()) {
        return std::to_string(v.get<long long>());
    }
    schema(where + ": class id must be a string or integer");
}

std::map<ClassId, std::filesystem::path> path_map(const json& obj, const char* key, const std::string& where,
                                                  const std::filesystem::path& base, bool required) {
    std::map<ClassId, std::filesystem::path> out;
    auto it = obj.find(key);
    if (it == obj.end()) {
        if (required) {
            schema(where + ": missing key '" + key + "'");
        }
        return out;
    }
    if (!it->is_object()) {
        schema(where + ": '" + key + "' must be an object of class_id -> path");
    }
    for (const auto& [cls, path] : it->items()) {
        if (!path.is_string()) {
            schema(where + ": " + key + "[" + cls + "] must be a path string");
        }
        out.emplace(cls, base / path.get<std::string>());
    }
    return out;
}

std::uint64_t fnv1a(std::string_view text) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) noexcept {
    h ^= v + 0x9e3779b97f4a7c15ull;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 31;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 29;
    return h;
}

} // namespace

std::string_view to_string(Domain domain) noexcept {
    switch (domain) {
    case Domain::General: return "General";
    case Domain::Earth: return "Earth";
    case Domain::Medical: return "Medical";
    case Domain::Engineering: return "Engineering";
    case Domain::Agriculture: return "Agriculture";
    }
    return "General";
}

Domain parse_domain(std::string_view name) {
    for (Domain d : kAllDomains) {
        if (to_string(d) == name) {
            return d;
        }
    }
    throw Error(ErrorCode::UnknownDomain, "'" + std::string(name) + "' is not one of the five MESS domains");
}

const ImageEntry* DatasetManifest::find_image(std::string_view image_id) const noexcept {
    for (const auto& img : images) {
        if (img.image_id == image_id) {
            return &img;
        }
    }
    return nullptr;
}

const ClassEntry* DatasetManifest::find_class(std::string_view class_id) const noexcept {
    for (const auto& c : classes) {
        if (c.id == class_id) {
            return &c;
        }
    }
    return nullptr;
}

DatasetManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        schema(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        schema("manifest root must be an object");
    }

    DatasetManifest m;
    m.dataset_id = require_string(doc, "dataset_id", "manifest");
    m.domain = parse_domain(require_string(doc, "domain", "manifest"));

    const json& classes = require(doc, "classes", "manifest");
    if (!classes.is_array() || classes.empty()) {
        schema("manifest: 'classes' must be a nonempty array");
    }
    std::set<ClassId> class_ids;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const std::string where = "classes[" + std::to_string(i) + "]";
        const json& c = classes[i];
        if (!c.is_object()) {
            schema(where + " must be an object");
        }
        ClassEntry entry{class_id_of(require(c, "id", where), where), require_string(c, "name", where)};
        if (!class_ids.insert(entry.id).second) {
            throw Error(ErrorCode::DuplicateId, "class id '" + entry.id + "' appears twice");
        }
        m.classes.push_back(std::move(entry));
    }

    const json& images = require(doc, "images", "manifest");
    if (!images.is_array()) {
        schema("manifest: 'images' must be an array");
    }
    std::set<std::string> image_ids;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const json& img = images[i];
        std::string where = "images[" + std::to_string(i) + "]";
        if (!img.is_object()) {
            schema(where + " must be an object");
        }
        ImageEntry entry;
        entry.image_id = require_string(img, "image_id", where);
        where += " (" + entry.image_id + ")";
        if (!image_ids.insert(entry.image_id).second) {
            throw Error(ErrorCode::DuplicateId, "image id '" + entry.image_id + "' appears twice");
        }
        entry.feature_path = base_dir / require_string(img, "feature_path", where);
        entry.gt_masks = path_map(img, "gt_masks", where, base_dir, true);
        entry.tp_masks = path_map(img, "tp_masks", where, base_dir, false);
        entry.tp_logits = path_map(img, "tp_logits", where, base_dir, false);
        for (const auto* table : {&entry.gt_masks, &entry.tp_masks, &entry.tp_logits}) {
            for (const auto& [cls, _] : *table) {
                if (!class_ids.contains(cls)) {
                    schema(where + ": unknown class id '" + cls + "'");
                }
            }
        }
        if (img.contains("proposal_bank")) {
            entry.proposal_bank = base_dir / require_string(img, "proposal_bank", where);
        }
        if (img.contains("region_labels")) {
            entry.region_labels = base_dir / require_string(img, "region_labels", where);
        }
        m.images.push_back(std::move(entry));
    }
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open manifest " + path.string());
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_manifest(text.str(), path.parent_path());
}

GtAreaIndex index_gt_areas(const DatasetManifest& manifest) {
    GtAreaIndex out;
    for (const auto& img : manifest.images) {
        for (const auto& [cls, path] : img.gt_masks) {
            out[{img.image_id, cls}] = read_mask(path).area();
        }
    }
    return out;
}

std::string template_text_prompt(std::string_view class_name) {
    if (class_name.empty()) {
        throw Error(ErrorCode::EmptyClassName, "cannot template a prompt for an empty class name");
    }
    return "Segment all the instances of class " + std::string(class_name) + " in the image";
}

std::uint64_t derive_episode_seed(std::uint64_t global_seed, std::string_view dataset_id, std::string_view image_id,
                                  std::string_view class_id) noexcept {
    std::uint64_t h = mix(global_seed, fnv1a(dataset_id));
    h = mix(h, fnv1a(image_id));
    return mix(h, fnv1a(class_id));
}

PromptEpisode sample_episode(const DatasetManifest& manifest, const GtAreaIndex& areas, std::string_view target_id,
                             const ClassId& class_id, std::uint64_t seed) {
    const ClassEntry* cls = manifest.find_class(class_id);
    if (cls == nullptr) {
        throw Error(ErrorCode::InvalidArgument, "class '" + class_id + "' is not in " + manifest.dataset_id);
    }
    if (manifest.find_image(target_id) == nullptr) {
        throw Error(ErrorCode::InvalidArgument,
                    "image '" + std::string(target_id) + "' is not in " + manifest.dataset_id);
    }
    std::vector<const ImageEntry*> eligible;
    for (const auto& img : manifest.images) {
        if (img.image_id == target_id) {
            continue;
        }
        auto it = areas.find({img.image_id, class_id});
        if (it != areas.end() && it->second > 0) {
            eligible.push_back(&img);
        }
    }
    if (eligible.empty()) {
        throw Error(ErrorCode::NoEligibleReference, "no other image of " + manifest.dataset_id +
                                                        " shows class '" + class_id + "'");
    }
    std::mt19937_64 engine(seed);
    const auto pick = uniform_below(engine, eligible.size());

    PromptEpisode ep;
    ep.dataset_id = manifest.dataset_id;
    ep.target_id = std::string(target_id);
    ep.class_id = class_id;
    ep.reference_ids.push_back(eligible[pick]->image_id);
    ep.text_prompt = template_text_prompt(cls->name);
    ep.rng_seed = seed;
    return ep;
}

} // namespace fpss
