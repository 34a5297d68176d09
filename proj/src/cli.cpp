#include "fpss/cli.hpp"

#include "fpss/proposal.hpp"
#include "fpss/tensor_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>
#include <tuple>

namespace fpss {

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::SchemaViolation:
    case ErrorCode::UnknownDomain:
    case ErrorCode::DuplicateId:
    case ErrorCode::EmptyClassName:
        return kExitConfig;
    case ErrorCode::IoFailure:
    case ErrorCode::NoEligibleReference:
    case ErrorCode::MissingReferenceTPMask:
    case ErrorCode::AlignmentMismatch:
    case ErrorCode::DatasetMismatch:
    case ErrorCode::NoRecords:
        return kExitMissingInputs;
    default:
        return kExitPipeline;
    }
}

std::string method_id(const FusionStrategy& strategy) {
    std::string id(to_string(strategy.kind));
    if (strategy.with_lisa_mask && strategy.kind != StrategyKind::PromptMatcher) {
        id += "+lisa";
    }
    return id;
}

namespace {

bool needs_tp_mask(const FusionStrategy& s) {
    return s.kind == StrategyKind::PromptMatcher || s.kind == StrategyKind::Selection || s.with_lisa_mask;
}

bool needs_tp_logits(const FusionStrategy& s) {
    return s.kind == StrategyKind::ProbabilityMerging || s.kind == StrategyKind::ClusterMerging;
}

const std::filesystem::path& path_for(const std::map<ClassId, std::filesystem::path>& paths, const ClassId& cls,
                                      const std::string& image_id, const char* what) {
    auto it = paths.find(cls);
    if (it == paths.end()) {
        throw Error(ErrorCode::IoFailure, "image " + image_id + " lists no " + what + " for class " + cls);
    }
    return it->second;
}

struct LoadedDecoder {
    std::unique_ptr<DecoderBackend> backend;
    GridShape image;
};

LoadedDecoder load_decoder(const ImageEntry& image) {
    if (image.proposal_bank) {
        auto bank = std::make_unique<ProposalBankDecoder>(ProposalBankDecoder::load(*image.proposal_bank));
        const GridShape shape = bank->shape();
        return {std::move(bank), shape};
    }
    if (image.region_labels) {
        auto oracle = std::make_unique<RegionOracleDecoder>(RegionOracleDecoder::load(*image.region_labels));
        const GridShape shape = oracle->shape();
        return {std::move(oracle), shape};
    }
    throw Error(ErrorCode::IoFailure, "image " + image.image_id + " lists neither proposal_bank nor region_labels");
}

} // namespace

void check_strategy_inputs(const DatasetManifest& manifest, const FusionStrategy& strategy) {
    for (const auto& image : manifest.images) {
        for (const auto& [cls, _] : image.gt_masks) {
            if (needs_tp_mask(strategy) && !image.tp_masks.contains(cls)) {
                throw Error(ErrorCode::InvalidArgument, "strategy " + method_id(strategy) + " needs tp_masks, but " +
                                                            manifest.dataset_id + "/" + image.image_id +
                                                            " has none for class " + cls);
            }
            if (needs_tp_logits(strategy) && !image.tp_logits.contains(cls)) {
                throw Error(ErrorCode::InvalidArgument, "strategy " + method_id(strategy) +
                                                            " needs tp_logits, but " + manifest.dataset_id + "/" +
                                                            image.image_id + " has none for class " + cls);
            }
        }
    }
}

EpisodeRun run_manifest_episode(const DatasetManifest& manifest, const GtAreaIndex& areas,
                                const std::string& image_id, const ClassId& class_id,
                                const FusionStrategy& strategy, std::uint64_t global_seed,
                                const std::optional<std::string>& reference_id) {
    const ImageEntry* target = manifest.find_image(image_id);
    if (target == nullptr) {
        throw Error(ErrorCode::InvalidArgument, "no image " + image_id + " in " + manifest.dataset_id);
    }
    const ClassEntry* cls = manifest.find_class(class_id);
    if (cls == nullptr) {
        throw Error(ErrorCode::InvalidArgument, "no class " + class_id + " in " + manifest.dataset_id);
    }
    const std::uint64_t seed = derive_episode_seed(global_seed, manifest.dataset_id, image_id, class_id);

    EpisodeRun run;
    if (reference_id) {
        if (manifest.find_image(*reference_id) == nullptr) {
            throw Error(ErrorCode::InvalidArgument, "no reference image " + *reference_id);
        }
        run.episode = PromptEpisode{manifest.dataset_id, image_id,  class_id, {*reference_id},
                                    template_text_prompt(cls->name), seed};
    } else {
        run.episode = sample_episode(manifest, areas, image_id, class_id, seed);
    }
    const ImageEntry* ref = manifest.find_image(run.episode.reference_id());

    const FeatureMap ref_feats = read_feature_map(ref->feature_path);
    const BinaryMask ref_mask = read_mask(path_for(ref->gt_masks, class_id, ref->image_id, "gt_masks"));
    const FeatureMap targ_feats = read_feature_map(target->feature_path);
    const LoadedDecoder decoder = load_decoder(*target);

    if (auto it = target->gt_masks.find(class_id); it != target->gt_masks.end()) {
        run.gt = read_mask(it->second);
        if (run.gt.shape() != decoder.image) {
            throw Error(ErrorCode::DimensionMismatch, "ground truth of " + image_id + " does not match its decoder");
        }
    } else {
        run.gt = BinaryMask(decoder.image.height, decoder.image.width);
    }

    TextPromptInputs tp;
    if (needs_tp_mask(strategy)) {
        tp.tp_mask = read_mask(path_for(target->tp_masks, class_id, image_id, "tp_masks"));
    }
    if (needs_tp_logits(strategy)) {
        tp.tp_logits = read_real_grid(path_for(target->tp_logits, class_id, image_id, "tp_logits"));
    }
    if (strategy.kind == StrategyKind::Selection) {
        auto it = ref->tp_masks.find(class_id);
        if (it == ref->tp_masks.end()) {
            throw Error(ErrorCode::MissingReferenceTPMask,
                        "reference " + ref->image_id + " has no tp_mask for class " + class_id);
        }
        tp.tp_mask_reference = read_mask(it->second);
    }

    const Episode episode{ref_feats, ref_mask, targ_feats, decoder.image, seed};
    run.result = run_strategy(strategy, episode, *decoder.backend, tp);
    return run;
}

EvaluationOutput evaluate_manifests(const std::vector<DatasetManifest>& manifests, const FusionStrategy& strategy,
                                    std::uint64_t global_seed, std::size_t workers) {
    struct Task {
        std::size_t manifest;
        std::string image_id;
        ClassId class_id;
    };
    std::vector<GtAreaIndex> areas;
    std::vector<Task> tasks;
    for (std::size_t m = 0; m < manifests.size(); ++m) {
        areas.push_back(index_gt_areas(manifests[m]));
        for (const auto& image : manifests[m].images) {
            for (const auto& [cls, _] : image.gt_masks) {
                tasks.push_back({m, image.image_id, cls});
            }
        }
    }
    std::sort(tasks.begin(), tasks.end(), [&](const Task& a, const Task& b) {
        return std::tie(manifests[a.manifest].dataset_id, a.image_id, a.class_id) <
               std::tie(manifests[b.manifest].dataset_id, b.image_id, b.class_id);
    });

    const std::string method = method_id(strategy);
    std::vector<IoURecord> records(tasks.size());
    std::vector<std::optional<EpisodeFailure>> failures(tasks.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;

    auto work = [&]() {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            const Task& task = tasks[i];
            const DatasetManifest& manifest = manifests[task.manifest];
            IoURecord& rec = records[i];
            rec.dataset_id = manifest.dataset_id;
            rec.domain = manifest.domain;
            rec.class_id = task.class_id;
            rec.image_id = task.image_id;
            rec.method_id = method;
            try {
                const auto run = run_manifest_episode(manifest, areas[task.manifest], task.image_id, task.class_id,
                                                      strategy, global_seed);
                const auto score = compute_iou(run.result.final_mask, run.gt);
                rec.intersection = score.intersection;
                rec.union_count = score.union_count;
            } catch (const Error& e) {
                spdlog::warn("{}/{}/{} failed: {}", manifest.dataset_id, task.image_id, task.class_id, e.what());
                const auto it = areas[task.manifest].find({task.image_id, task.class_id});
                const std::size_t gt_area = it == areas[task.manifest].end() ? 0 : it->second;
                rec.intersection = 0;
                rec.union_count = std::max<std::size_t>(gt_area, 1);
                failures[i] = EpisodeFailure{manifest.dataset_id, task.image_id, task.class_id, e.code(), e.what()};
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) {
                    fatal = std::current_exception();
                }
                next = tasks.size();
                return;
            }
        }
    };

    if (workers == 0) {
        workers = std::max(1u, std::thread::hardware_concurrency());
    }
    workers = std::min(workers, std::max<std::size_t>(tasks.size(), 1));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
    }
    if (fatal) {
        std::rethrow_exception(fatal);
    }

    EvaluationOutput out;
    out.records = std::move(records);
    for (auto& f : failures) {
        if (f) {
            out.failures.push_back(std::move(*f));
        }
    }
    return out;
}

void write_failures_csv(std::ostream& out, const std::vector<EpisodeFailure>& failures) {
    out << "dataset,image,class,code,message\n";
    for (const auto& f : failures) {
        out << csv_field(f.dataset_id) << ',' << csv_field(f.image_id) << ',' << csv_field(f.class_id) << ','
            << to_string(f.code) << ',' << csv_field(f.message) << '\n';
    }
}

namespace {

void configure_logging() {
    static std::once_flag once;
    std::call_once(once, [] { spdlog::set_default_logger(spdlog::stderr_color_mt("fpss")); });
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("FPSS_LOG")) {
        const std::string value(env);
        if (value == "error") level = spdlog::level::err;
        else if (value == "info") level = spdlog::level::info;
        else if (value == "debug") level = spdlog::level::debug;
    }
    spdlog::set_level(level);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) {
        throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    }
}

void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
    }
}

nlohmann::json points_json(const std::vector<PointPrompt>& points) {
    auto arr = nlohmann::json::array();
    for (const auto& p : points) {
        arr.push_back({{"y", p.y}, {"x", p.x}, {"score", p.score}});
    }
    return arr;
}

nlohmann::json diagnostics_json(const EpisodeRun& run, const FusionStrategy& strategy) {
    const auto& r = run.result;
    const auto& d = r.diagnostics;
    nlohmann::json j;
    j["dataset"] = run.episode.dataset_id;
    j["image"] = run.episode.target_id;
    j["class"] = run.episode.class_id;
    j["reference"] = run.episode.reference_id();
    j["text_prompt"] = run.episode.text_prompt;
    j["seed"] = run.episode.rng_seed;
    j["strategy"] = method_id(strategy);
    j["branch_taken"] = r.branch_taken ? nlohmann::json(std::string(to_string(*r.branch_taken))) : nlohmann::json();
    j["selection_gate"] = d.selection_gate ? nlohmann::json(*d.selection_gate) : nlohmann::json();
    j["counters"] = {{"prototypes", d.prototypes},
                     {"retained_cells", d.retained_cells},
                     {"vp_clusters", d.vp_clusters},
                     {"tp_clusters", d.tp_clusters},
                     {"uncovered_clusters", d.uncovered_clusters},
                     {"duplicate_proposals", d.duplicate_proposals},
                     {"accepted", d.accepted},
                     {"rejected", d.rejected},
                     {"mass_rejected", d.mass_rejected},
                     {"empty_reference_after_downsample", d.empty_reference_after_downsample}};
    auto clusters = nlohmann::json::array();
    for (const auto& c : r.clusters) {
        clusters.push_back({{"size", c.members.size()},
                            {"centroid", {c.centroid_y, c.centroid_x}},
                            {"peak", {{"y", c.peak.y}, {"x", c.peak.x}, {"score", c.peak.score}}},
                            {"prompts", points_json(c.prompts)}});
    }
    j["clusters"] = clusters;
    auto proposals = nlohmann::json::array();
    for (const auto& jp : r.proposals) {
        proposals.push_back(
            {{"source", std::string(to_string(jp.proposal.source))},
             {"area", jp.proposal.mask.area()},
             {"prompts", points_json(jp.proposal.prompt_points)},
             {"decoder_score",
              jp.proposal.decoder_score ? nlohmann::json(*jp.proposal.decoder_score) : nlohmann::json()},
             {"backward_score", jp.verdict.score},
             {"accepted", jp.verdict.accepted},
             {"reason", std::string(to_string(jp.verdict.reason))}});
    }
    j["proposals"] = proposals;
    j["final_area"] = r.final_mask.area();
    if (run.gt.area() > 0 || r.final_mask.area() > 0) {
        j["iou_vs_gt"] = iou(r.final_mask, run.gt);
    }
    return j;
}

struct StrategyFlags {
    std::string strategy = "visual";
    bool with_lisa_mask = false;
    FusionParams params;
    std::string plus_rule;

    void add_to(CLI::App* sub) {
        sub->add_option("--strategy", strategy, "visual|promptmatcher|prob-merge|cluster-merge|select")
            ->capture_default_str();
        sub->add_option("--with-lisa-mask", with_lisa_mask, "Append the text-prompt mask (true|false)")
            ->capture_default_str();
        sub->add_option("--tau", params.match.temperature, "Softmax temperature")->capture_default_str();
        sub->add_option("--theta", params.match.threshold, "Cosine retention threshold in (-1, 1)")
            ->capture_default_str();
        sub->add_option("--rho", params.match.consistency, "Minimum backward score")->capture_default_str();
        sub->add_option("--min-area", params.match.min_area, "Minimum proposal area in pixels")
            ->capture_default_str();
        sub->add_option("--max-area-frac", params.match.max_area_frac, "Maximum proposal area fraction")
            ->capture_default_str();
        sub->add_option("--link-radius", params.match.link_radius, "Chebyshev linking radius in cells")
            ->capture_default_str();
        sub->add_option("--points-per-cluster", params.match.points_per_cluster, "Prompt points per cluster")
            ->capture_default_str();
        sub->add_option("--proto-cap", params.match.prototype_cap, "Maximum prototype count")
            ->capture_default_str();
        sub->add_option("--selection-iou", params.selection_iou_threshold, "Reference IoU gate for select")
            ->capture_default_str();
        sub->add_option("--mass-check", params.merged_mass_check, "Merged-mass rejection for prob-merge")
            ->capture_default_str();
    }

    FusionStrategy build() const {
        FusionStrategy s{parse_strategy(strategy), with_lisa_mask, params};
        validate(s.params.match);
        if (!(params.selection_iou_threshold >= 0.0 && params.selection_iou_threshold <= 1.0)) {
            throw Error(ErrorCode::InvalidArgument, "--selection-iou must lie in [0, 1]");
        }
        return s;
    }
};

std::vector<DatasetManifest> load_manifests(const std::vector<std::string>& paths) {
    std::vector<DatasetManifest> out;
    for (const auto& p : paths) {
        out.push_back(load_manifest(p));
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (out[i].dataset_id == out[j].dataset_id) {
                throw Error(ErrorCode::DuplicateId, "dataset " + out[i].dataset_id + " is given twice");
            }
        }
    }
    return out;
}

std::string method_name(const std::vector<IoURecord>& records, const char* fallback) {
    return records.empty() || records.front().method_id.empty() ? fallback : records.front().method_id;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    configure_logging();

    CLI::App app{"Training-free prompt-fusion segmentation"};
    app.require_subcommand(1);

    StrategyFlags seg_flags;
    std::string seg_manifest, seg_image, seg_class, seg_reference, seg_out;
    std::uint64_t seg_seed = 0;
    auto* segment = app.add_subcommand("segment", "Run one episode and write its mask and diagnostics");
    segment->add_option("--manifest", seg_manifest, "Dataset manifest")->required();
    segment->add_option("--image", seg_image, "Target image id")->required();
    segment->add_option("--class", seg_class, "Class id")->required();
    segment->add_option("--reference", seg_reference, "Reference image id (default: drawn with the seed)");
    segment->add_option("--seed", seg_seed, "Global seed")->capture_default_str();
    segment->add_option("--out", seg_out, "Output directory")->required();
    seg_flags.add_to(segment);

    StrategyFlags eval_flags;
    std::vector<std::string> eval_manifests;
    std::uint64_t eval_seed = 0;
    std::size_t eval_workers = 1;
    std::string eval_out;
    auto* evaluate = app.add_subcommand("evaluate", "Run every episode of the manifests and score them");
    evaluate->add_option("--manifest", eval_manifests, "Dataset manifests")->required();
    evaluate->add_option("--seed", eval_seed, "Global seed")->required();
    evaluate->add_option("--workers", eval_workers, "Worker threads (0 = all cores)")->capture_default_str();
    evaluate->add_option("--out", eval_out, "Output directory")->required();
    eval_flags.add_to(evaluate);

    std::string orc_a, orc_b, orc_mode = "dataset", orc_rule = "max-accumulated", orc_out;
    auto* oracle = app.add_subcommand("oracle", "Oracle ensemble of two record sets");
    oracle->add_option("--records-a", orc_a, "Records of the text-prompted method")->required();
    oracle->add_option("--records-b", orc_b, "Records of the visual-prompted method")->required();
    oracle->add_option("--mode", orc_mode, "dataset|image")
        ->check(CLI::IsMember({"dataset", "image"}))
        ->capture_default_str();
    oracle->add_option("--plus-rule", orc_rule, "Image-mode rule: max-accumulated|per-image-iou")
        ->check(CLI::IsMember({"max-accumulated", "per-image-iou"}))
        ->capture_default_str();
    oracle->add_option("--out", orc_out, "Output directory (report.csv)");

    std::string diff_tp, diff_vp, diff_out;
    std::size_t diff_top = 10;
    auto* diff = app.add_subcommand("diff", "Rank classes by the IoU gap between two record sets");
    diff->add_option("--records-tp", diff_tp, "Text-prompt records")->required();
    diff->add_option("--records-vp", diff_vp, "Visual-prompt records")->required();
    diff->add_option("--top-n", diff_top, "Rows to keep")->capture_default_str();
    diff->add_option("--out", diff_out, "Output CSV (default: standard output)");

    std::vector<const char*> argv{"fpss"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }

    try {
        if (segment->parsed()) {
            const FusionStrategy strategy = seg_flags.build();
            const DatasetManifest manifest = load_manifest(seg_manifest);
            const auto areas = index_gt_areas(manifest);
            const auto run =
                run_manifest_episode(manifest, areas, seg_image, seg_class, strategy, seg_seed,
                                     seg_reference.empty() ? std::nullopt : std::optional<std::string>(seg_reference));
            make_dir(seg_out);
            write_pgm(std::filesystem::path(seg_out) / "mask.pgm", run.result.final_mask);
            write_tensor(std::filesystem::path(seg_out) / "mask.fpss", run.result.final_mask);
            write_text(std::filesystem::path(seg_out) / "diagnostics.json",
                       diagnostics_json(run, strategy).dump(2) + "\n");
            out << "final mask area " << run.result.final_mask.area() << ", " << run.result.diagnostics.accepted
                << " of " << run.result.proposals.size() << " proposals accepted\n";
            return kExitOk;
        }
        if (evaluate->parsed()) {
            const FusionStrategy strategy = eval_flags.build();
            const auto manifests = load_manifests(eval_manifests);
            for (const auto& m : manifests) {
                check_strategy_inputs(m, strategy);
            }
            const auto result = evaluate_manifests(manifests, strategy, eval_seed, eval_workers);
            make_dir(eval_out);
            const std::filesystem::path dir(eval_out);
            std::ostringstream records;
            write_records_csv(records, result.records);
            write_text(dir / "records.csv", records.str());
            std::ostringstream failures;
            write_failures_csv(failures, result.failures);
            write_text(dir / "failures.csv", failures.str());
            const std::vector<AggregateReport> reports{aggregate_records(method_id(strategy), result.records)};
            std::ostringstream report;
            write_report_csv(report, reports);
            write_text(dir / "report.csv", report.str());
            const std::string table = format_report_table(reports);
            write_text(dir / "report.txt", table);
            out << table;
            if (!result.failures.empty()) {
                err << result.failures.size() << " episode(s) failed; see failures.csv\n";
            }
            return kExitOk;
        }
        if (oracle->parsed()) {
            const auto a = read_records_csv(std::filesystem::path(orc_a));
            const auto b = read_records_csv(std::filesystem::path(orc_b));
            const auto rep_a = aggregate_records(method_name(a, "A"), a);
            const auto rep_b = aggregate_records(method_name(b, "B"), b);
            std::vector<AggregateReport> reports{rep_a, rep_b};
            std::vector<IoURecord> picked;
            if (orc_mode == "dataset") {
                reports.push_back(oracle_ensemble(rep_a, rep_b));
            } else {
                const auto rule = orc_rule == "per-image-iou" ? OraclePlusRule::PerImageIoU
                                                              : OraclePlusRule::MaxAccumulatedIoU;
                picked = oracle_plus_records(a, b, rule);
                reports.push_back(aggregate_records("oracle+", picked));
            }
            out << format_report_table(reports);
            if (!orc_out.empty()) {
                make_dir(orc_out);
                std::ostringstream report;
                write_report_csv(report, reports);
                write_text(std::filesystem::path(orc_out) / "report.csv", report.str());
                if (!picked.empty()) {
                    std::ostringstream records;
                    write_records_csv(records, picked);
                    write_text(std::filesystem::path(orc_out) / "records.csv", records.str());
                }
            }
            return kExitOk;
        }
        if (diff->parsed()) {
            const auto tp = per_class_table(read_records_csv(std::filesystem::path(diff_tp)));
            const auto vp = per_class_table(read_records_csv(std::filesystem::path(diff_vp)));
            auto ranking = class_diff_ranking(tp, vp);
            ranking.resize(std::min(ranking.size(), diff_top));
            std::ostringstream csv;
            write_diff_csv(csv, ranking);
            if (diff_out.empty()) {
                out << csv.str();
            } else {
                write_text(diff_out, csv.str());
            }
            return kExitOk;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitPipeline;
    }
    return kExitConfig;
}

} // namespace fpss
