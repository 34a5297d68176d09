#pragma once

#include "fpss/error.hpp"
#include "fpss/eval.hpp"
#include "fpss/fusion.hpp"
#include "fpss/ingest.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fpss {

enum ExitCode : int {
    kExitOk = 0,
    kExitConfig = 2,        // bad flags, out-of-range thresholds, malformed manifest
    kExitMissingInputs = 3, // absent files, misaligned record sets
    kExitPipeline = 4,      // corrupt tensors, shape mismatches, numeric failures
};

int exit_code_for(ErrorCode code) noexcept;

/// Name used in the method column of records written by `evaluate`.
std::string method_id(const FusionStrategy& strategy);

struct EpisodeRun {
    PromptEpisode episode;
    EpisodeResult result;
    BinaryMask gt;
};

/// Loads one (image, class) episode from a manifest and runs the strategy. The reference is drawn with
/// the per-episode seed unless `reference_id` is given.
EpisodeRun run_manifest_episode(const DatasetManifest& manifest, const GtAreaIndex& areas,
                                const std::string& image_id, const ClassId& class_id,
                                const FusionStrategy& strategy, std::uint64_t global_seed,
                                const std::optional<std::string>& reference_id = std::nullopt);

/// Throws InvalidArgument naming the first episode that lacks a text-prompt input the strategy needs.
void check_strategy_inputs(const DatasetManifest& manifest, const FusionStrategy& strategy);

struct EpisodeFailure {
    std::string dataset_id;
    std::string image_id;
    ClassId class_id;
    ErrorCode code = ErrorCode::InvalidArgument;
    std::string message;
};

struct EvaluationOutput {
    std::vector<IoURecord> records; // sorted by dataset, image, class
    std::vector<EpisodeFailure> failures;
};

/// Every (image, class) pair with a ground-truth mask, across manifests, on `workers` threads.
EvaluationOutput evaluate_manifests(const std::vector<DatasetManifest>& manifests, const FusionStrategy& strategy,
                                    std::uint64_t global_seed, std::size_t workers);

void write_failures_csv(std::ostream& out, const std::vector<EpisodeFailure>& failures);

/// Full command line (argv[0] excluded). Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace fpss
