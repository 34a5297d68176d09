#include "fpss/error.hpp"
#include "fpss/ingest.hpp"
#include "fpss/tensor_io.hpp"
#include "synthetic.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <fstream>

using namespace fpss;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an fpss::Error");
    return ErrorCode::InvalidArgument;
}

// n images; image i has a mask for class "c" with area areas[i].
json manifest_with_areas(const std::filesystem::path& dir, const std::vector<std::size_t>& areas) {
    json images = json::array();
    for (std::size_t i = 0; i < areas.size(); ++i) {
        BinaryMask m(8, 8);
        for (std::size_t p = 0; p < areas[i]; ++p) m.set(p / 8, p % 8);
        const std::string id = "im" + std::to_string(i);
        write_tensor(dir / (id + ".fpss"), m);
        images.push_back({{"image_id", id}, {"feature_path", id + "_f.fpss"}, {"gt_masks", {{"c", id + ".fpss"}}}});
    }
    return {{"dataset_id", "d"},
            {"domain", "Medical"},
            {"classes", {{{"id", "c"}, {"name", "cell"}}}},
            {"images", images}};
}

} // namespace

TEST_CASE("manifest loading") {
    const auto dir = test::scratch_dir("ingest_manifest");
    const json base = manifest_with_areas(dir, {3, 5});

    SUBCASE("minimal manifest") {
        const auto m = parse_manifest(base.dump(), dir);
        CHECK(m.dataset_id == "d");
        CHECK(m.domain == Domain::Medical);
        CHECK(m.images.size() == 2);
        CHECK(m.images[1].gt_masks.at("c") == dir / "im1.fpss");
        CHECK(m.find_class("c")->name == "cell");
    }
    SUBCASE("file on disk") {
        std::ofstream(dir / "m.json") << base.dump();
        CHECK(load_manifest(dir / "m.json").images.size() == 2);
        CHECK(code_of([&] { load_manifest(dir / "absent.json"); }) == ErrorCode::IoFailure);
    }
    SUBCASE("unknown domain") {
        json j = base;
        j["domain"] = "Astronomy";
        CHECK(code_of([&] { parse_manifest(j.dump(), dir); }) == ErrorCode::UnknownDomain);
    }
    SUBCASE("duplicate image id") {
        json j = base;
        j["images"][1]["image_id"] = "im0";
        CHECK(code_of([&] { parse_manifest(j.dump(), dir); }) == ErrorCode::DuplicateId);
    }
    SUBCASE("duplicate class id") {
        json j = base;
        j["classes"].push_back({{"id", "c"}, {"name", "other"}});
        CHECK(code_of([&] { parse_manifest(j.dump(), dir); }) == ErrorCode::DuplicateId);
    }
    SUBCASE("integer class ids") {
        json j = base;
        j["classes"][0]["id"] = 7;
        j["images"][0]["gt_masks"] = {{"7", "im0.fpss"}};
        j["images"][1]["gt_masks"] = {{"7", "im1.fpss"}};
        CHECK(parse_manifest(j.dump(), dir).classes[0].id == "7");
    }
    SUBCASE("mask for an undeclared class") {
        json j = base;
        j["images"][0]["gt_masks"]["zz"] = "im0.fpss";
        CHECK(code_of([&] { parse_manifest(j.dump(), dir); }) == ErrorCode::SchemaViolation);
    }
    SUBCASE("malformed json") {
        CHECK(code_of([&] { parse_manifest("{\"dataset_id\":", dir); }) == ErrorCode::SchemaViolation);
    }
}

TEST_CASE("reference sampling") {
    const auto dir = test::scratch_dir("ingest_sampling");

    SUBCASE("single candidate") {
        const auto m = parse_manifest(manifest_with_areas(dir, {4, 9}).dump(), dir);
        const auto areas = index_gt_areas(m);
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto ep = sample_episode(m, areas, "im0", "c", seed);
            CHECK(ep.reference_id() == "im1");
            CHECK(ep.reference_ids.size() == 1);
            CHECK(ep.text_prompt == "Segment all the instances of class cell in the image");
        }
    }
    SUBCASE("empty ground truth is not eligible") {
        const auto m = parse_manifest(manifest_with_areas(dir, {4, 0, 2}).dump(), dir);
        const auto areas = index_gt_areas(m);
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            CHECK(sample_episode(m, areas, "im0", "c", seed).reference_id() == "im2");
        }
        const auto lonely = parse_manifest(manifest_with_areas(dir, {4, 0}).dump(), dir);
        CHECK(code_of([&] { sample_episode(lonely, index_gt_areas(lonely), "im0", "c", 1); }) ==
              ErrorCode::NoEligibleReference);
    }
    SUBCASE("uniform over ten candidates and never the target") {
        const auto m = parse_manifest(manifest_with_areas(dir, std::vector<std::size_t>(11, 5)).dump(), dir);
        const auto areas = index_gt_areas(m);
        std::map<std::string, int> counts;
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            const auto ep = sample_episode(m, areas, "im0", "c", seed);
            REQUIRE(ep.reference_id() != "im0");
            ++counts[ep.reference_id()];
            CHECK(sample_episode(m, areas, "im0", "c", seed).reference_id() == ep.reference_id());
        }
        CHECK(counts.size() == 10);
        double chi2 = 0.0;
        for (const auto& [_, n] : counts) {
            CHECK(std::abs(n - 100.0) <= 3.0 * std::sqrt(1000.0 * 0.1 * 0.9));
            chi2 += (n - 100.0) * (n - 100.0) / 100.0;
        }
        // 9 degrees of freedom, p = 0.001.
        CHECK(chi2 < 27.88);
    }
}

TEST_CASE("text prompt template") {
    CHECK(template_text_prompt("airplane") == "Segment all the instances of class airplane in the image");
    CHECK(template_text_prompt("Worm-eating warbler") ==
          "Segment all the instances of class Worm-eating warbler in the image");
    CHECK(code_of([] { template_text_prompt(""); }) == ErrorCode::EmptyClassName);
}

TEST_CASE("episode seeds depend on every identity field") {
    const auto s = derive_episode_seed(42, "d", "im0", "c");
    CHECK(s == derive_episode_seed(42, "d", "im0", "c"));
    CHECK(s != derive_episode_seed(43, "d", "im0", "c"));
    CHECK(s != derive_episode_seed(42, "e", "im0", "c"));
    CHECK(s != derive_episode_seed(42, "d", "im1", "c"));
    CHECK(s != derive_episode_seed(42, "d", "im0", "k"));
    // Field boundaries matter.
    CHECK(derive_episode_seed(1, "ab", "c", "x") != derive_episode_seed(1, "a", "bc", "x"));
}

TEST_CASE("domain names") {
    for (Domain d : kAllDomains) CHECK(parse_domain(to_string(d)) == d);
    CHECK(code_of([] { parse_domain("Astronomy"); }) == ErrorCode::UnknownDomain);
}
