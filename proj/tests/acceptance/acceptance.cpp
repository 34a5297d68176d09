// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include "fpss/cli.hpp"
#include "fpss/error.hpp"
#include "fpss/eval.hpp"
#include "fpss/fusion.hpp"
#include "fpss/matching.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

using namespace fpss;

namespace {

const std::filesystem::path kFixtures = FPSS_FIXTURE_DIR;

// Pinned tolerances.
constexpr double kOracleTol = 0.1;  // percentage points
constexpr double kLisaTol = 0.2;    // percentage points
constexpr double kKernelTol = 1e-6; // per cell
constexpr double kMinMeanIoU = 0.95;
constexpr double kGateThreshold = 0.20;

struct Outcome {
    bool pass = true;
    std::string detail;
};

struct Criterion {
    std::string name;
    double time_limit_s;
    std::function<Outcome()> run;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (out_text) *out_text = out.str();
    return code;
}

// (method, level, name) -> percent, from a report CSV.
std::map<std::string, double> report_values(const std::filesystem::path& path) {
    std::map<std::string, double> values;
    std::istringstream in(slurp(path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        const auto f = split_csv_line(line);
        values[f[0] + "/" + f[1] + "/" + f[2]] = std::stod(f[4]);
    }
    return values;
}

Outcome table_fixture() {
    const auto dir = test::scratch_dir("acc_table");
    if (cli({"oracle", "--records-a", (kFixtures / "table9_lisa.csv").string(), "--records-b",
             (kFixtures / "table9_softmatcher.csv").string(), "--mode", "dataset", "--out", dir.string()}) != 0)
        return {false, "oracle command failed"};
    const auto v = report_values(dir / "report.csv");

    Outcome o;
    double worst_oracle = 0.0, worst_lisa = 0.0;
    const double oracle_expected[5] = {60.9, 47.8, 40.4, 28.7, 65.4};
    // Both rounded variants printed for the LISA row; the nearer one counts.
    const std::pair<double, double> lisa_expected[5] = {{57.0, 57.0}, {47.6, 47.7}, {31.6, 31.7}, {12.7, 12.8},
                                                        {63.9, 64.0}};
    for (std::size_t i = 0; i < 5; ++i) {
        const std::string dom(to_string(kAllDomains[i]));
        const double oracle = v.at("oracle/domain/" + dom);
        const double lisa = v.at("lisa/domain/" + dom);
        worst_oracle = std::max(worst_oracle, std::abs(oracle - oracle_expected[i]));
        worst_lisa = std::max(worst_lisa, std::min(std::abs(lisa - lisa_expected[i].first),
                                                   std::abs(lisa - lisa_expected[i].second)));
    }
    worst_oracle = std::max(worst_oracle, std::abs(v.at("oracle/overall/Average") - 48.6));
    worst_lisa = std::max(worst_lisa, std::abs(v.at("lisa/overall/Average") - 42.6));
    o.pass = worst_oracle <= kOracleTol && worst_lisa <= kLisaTol;
    o.detail = fmt::format("oracle avg {:.2f}, max dev {:.3f}; lisa avg {:.2f}, max dev {:.3f}",
                           v.at("oracle/overall/Average"), worst_oracle, v.at("lisa/overall/Average"), worst_lisa);
    return o;
}

Outcome diff_fixture() {
    std::string t3, t7;
    const int c3 = cli({"diff", "--records-tp", (kFixtures / "table3_tp.csv").string(), "--records-vp",
                        (kFixtures / "table3_vp.csv").string(), "--top-n", "1"},
                       &t3);
    const int c7 = cli({"diff", "--records-tp", (kFixtures / "table7_tp.csv").string(), "--records-vp",
                        (kFixtures / "table7_vp.csv").string(), "--top-n", "1"},
                       &t7);
    const std::string header = std::string(kDiffHeader) + "\n";
    const bool ok3 = c3 == 0 && t3 == header + "1,CUB-200,Worm-eating Warbler,1.40,82.20,80.80,80.80\n";
    const bool ok7 = c7 == 0 && t7 == header + "1,BDD100K,Pole,41.71,7.64,-34.07,34.07\n";
    auto top = [](const std::string& s) {
        const auto nl = s.find('\n');
        return nl == std::string::npos ? s : s.substr(nl + 1, s.size() - nl - 2);
    };
    return {ok3 && ok7, fmt::format("fine-grained top-1: {}; street-scene top-1: {}", top(t3), top(t7))};
}

Outcome kernel_oracle() {
    std::mt19937_64 rng(20240601);
    double worst = 0.0;
    std::size_t cells = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = 1 + rng() % 16, w = 1 + rng() % 16, d = 1 + rng() % 16;
        const std::size_t th = 1 + rng() % 16, tw = 1 + rng() % 16;
        const auto ref = test::random_features(rng, h, w, d, 0.05);
        const auto targ = test::random_features(rng, th, tw, d, 0.05);
        auto ref_mask = test::random_mask(rng, h, w, 0.4);
        // Keep at least one non-zero in-mask cell so prototypes exist.
        for (std::size_t i = 0; i < h * w; ++i) {
            const auto c = ref.cell(i);
            if (std::any_of(c.begin(), c.end(), [](float v) { return v != 0.0f; })) {
                ref_mask.set(i / w, i % w);
                break;
            }
        }
        const std::size_t cap = 1 + rng() % 64;
        const double tau = 0.05 + 0.5 * (rng() % 1000) / 1000.0;
        const auto protos = build_prototypes(ref, ref_mask, cap, trial);
        if (protos.size() == 0 || protos.size() > 64) return {false, fmt::format("trial {}: prototype count", trial)};

        const auto fm = forward_match(protos, targ, tau);
        const auto sim = test::naive_forward_similarity(ref, protos.source_cells, targ);
        const auto prob = test::naive_softmax(sim, tau);
        for (std::size_t i = 0; i < sim.size(); ++i) {
            worst = std::max(worst, std::abs(fm.similarity.data()[i] - sim[i]));
            worst = std::max(worst, std::abs(fm.probability.data()[i] - prob[i]));
        }
        cells += sim.size();

        auto proposal = test::random_mask(rng, th, tw, 0.3);
        proposal.set(rng() % th, rng() % tw);
        bool has_nonzero = false;
        for (std::size_t i = 0; i < th * tw && !has_nonzero; ++i) {
            if (!proposal.at(i)) continue;
            const auto c = targ.cell(i);
            has_nonzero = std::any_of(c.begin(), c.end(), [](float v) { return v != 0.0f; });
        }
        if (!has_nonzero) continue;
        const double fast = backward_score(proposal, targ, ref, ref_mask, 1u << 20);
        const double slow = test::naive_backward_score(proposal, targ, ref, ref_mask);
        worst = std::max(worst, std::abs(fast - slow));
    }
    return {worst <= kKernelTol, fmt::format("{} cells, max abs error {:.3g}", cells, worst)};
}

Outcome clustering_oracle() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t h = 1 + rng() % 32, w = 1 + rng() % 32;
        const double threshold = u(rng) * 0.9;
        const std::size_t radius = 1 + rng() % 3;
        RealGrid s(h, w);
        for (double& v : s.data()) v = u(rng);
        BinaryMask kept(h, w);
        for (std::size_t i = 0; i < h * w; ++i) kept.set(i / w, i % w, s.data()[i] >= threshold);
        const auto clusters = sample_and_cluster(s, threshold, radius, 3);
        if (test::partition_of(clusters) != test::union_find_clusters(kept, radius))
            return {false, fmt::format("trial {} ({}x{}, r={}) differs", trial, h, w, radius)};
    }
    return {true, "200/200 partitions equal"};
}

struct Planted {
    test::SyntheticEpisode ep;
    RegionOracleDecoder decoder;
    Episode episode;
    explicit Planted(std::uint64_t seed)
        : ep(test::make_synthetic_episode(seed)), decoder(ep.labels),
          episode{ep.ref_feats, ep.ref_mask, ep.targ_feats, ep.image, seed} {}
};

// A proposal is a distractor when most of it lies outside every object.
bool is_distractor(const BinaryMask& proposal, const BinaryMask& gt) {
    const auto r = compute_iou(proposal, gt);
    return r.intersection * 2 < proposal.area();
}

Outcome end_to_end() {
    const FusionParams params;
    double iou_sum = 0.0;
    std::size_t distractors = 0, distractors_rejected = 0, gt_exact = 0, halluc_equal = 0;
    constexpr int kEpisodes = 50;
    for (int i = 0; i < kEpisodes; ++i) {
        const Planted p(1000 + i);
        const auto vo = run_visual_only(p.episode, p.decoder, params);
        iou_sum += iou(vo.final_mask, p.ep.gt);
        for (const auto& jp : vo.proposals) {
            if (!is_distractor(jp.proposal.mask, p.ep.gt)) continue;
            ++distractors;
            if (!jp.verdict.accepted) ++distractors_rejected;
        }
        const auto with_gt = run_promptmatcher(p.episode, p.decoder, p.ep.gt, params);
        if (iou(with_gt.final_mask, p.ep.gt) == 1.0) ++gt_exact;
        const auto with_halluc = run_promptmatcher(p.episode, p.decoder, p.ep.hallucination, params);
        if (with_halluc.final_mask == vo.final_mask) ++halluc_equal;
    }
    const double mean = iou_sum / kEpisodes;
    const bool pass = mean >= kMinMeanIoU && distractors > 0 && distractors_rejected == distractors &&
                      gt_exact == kEpisodes && halluc_equal == kEpisodes;
    return {pass, fmt::format("visual mean IoU {:.4f}; distractors rejected {}/{}; GT-mask IoU 1 in {}/{}; "
                              "hallucinated == visual in {}/{}",
                              mean, distractors_rejected, distractors, gt_exact, kEpisodes, halluc_equal, kEpisodes)};
}

// Mask with IoU inside/total against `ref`.
BinaryMask gate_mask(const BinaryMask& ref, std::size_t inside, std::size_t total) {
    BinaryMask out(ref.height(), ref.width());
    std::size_t in = 0, outside = 0;
    const std::size_t want_out = total - ref.area();
    for (std::size_t i = 0; i < ref.shape().cells(); ++i) {
        const std::size_t y = i / ref.width(), x = i % ref.width();
        if (ref.at(i) && in < inside) {
            out.set(y, x);
            ++in;
        } else if (!ref.at(i) && outside < want_out) {
            out.set(y, x);
            ++outside;
        }
    }
    return out;
}

Outcome fusion_invariants() {
    FusionParams params;
    params.selection_iou_threshold = kGateThreshold;
    std::size_t area_ok = 0, clusters_ok = 0, gate_ok = 0;
    constexpr int kEpisodes = 100;
    std::mt19937_64 rng(5);
    for (int i = 0; i < kEpisodes; ++i) {
        const Planted p(5000 + i);
        const auto vo = run_visual_only(p.episode, p.decoder, params);

        // Random text-prompt mask: GT, hallucination or noise.
        BinaryMask tp = i % 3 == 0   ? p.ep.gt
                        : i % 3 == 1 ? p.ep.hallucination
                                     : test::random_mask(rng, p.ep.image.height, p.ep.image.width, 0.2);
        const auto pm = run_promptmatcher(p.episode, p.decoder, tp, params);
        if (pm.final_mask.area() >= vo.final_mask.area()) ++area_ok;

        const RealGrid flat(p.ep.targ_feats.height(), p.ep.targ_feats.width(), 0.0);
        const auto merged = run_probability_merging(p.episode, p.decoder, flat, params);
        if (test::partition_of(merged.clusters) == test::partition_of(vo.clusters)) ++clusters_ok;

        const std::size_t a = p.ep.ref_mask.area();
        const std::size_t total = 100 * ((a + 99) / 100);
        const auto low = gate_mask(p.ep.ref_mask, 19 * total / 100, total);
        const auto high = gate_mask(p.ep.ref_mask, 21 * total / 100, total);
        const auto r_low = run_selection(p.episode, p.decoder, tp, low, params, false);
        const auto r_high = run_selection(p.episode, p.decoder, tp, high, params, false);
        if (std::abs(*r_low.diagnostics.selection_gate - 0.19) < 1e-12 &&
            std::abs(*r_high.diagnostics.selection_gate - 0.21) < 1e-12 &&
            r_low.branch_taken == Branch::VisualBranch && r_high.branch_taken == Branch::TextBranch &&
            r_high.final_mask == tp)
            ++gate_ok;
    }
    const bool pass = area_ok == kEpisodes && clusters_ok == kEpisodes && gate_ok == kEpisodes;
    return {pass, fmt::format("area {}/{}; uniform merge clusters {}/{}; gate flip {}/{}", area_ok, kEpisodes,
                              clusters_ok, kEpisodes, gate_ok, kEpisodes)};
}

Outcome oracle_dominance() {
    std::mt19937_64 rng(31337);
    constexpr double eps = 1e-12;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<IoURecord> a, b;
        const std::size_t datasets = 1 + rng() % 6;
        for (std::size_t ds = 0; ds < datasets; ++ds) {
            const Domain dom = kAllDomains[rng() % 5];
            const std::size_t classes = 1 + rng() % 4, images = 1 + rng() % 6;
            for (std::size_t cls = 0; cls < classes; ++cls) {
                for (std::size_t img = 0; img < images; ++img) {
                    for (auto* out : {&a, &b}) {
                        const std::uint64_t u = rng() % 500;
                        const std::uint64_t i = u == 0 ? 0 : rng() % (u + 1);
                        out->push_back({"d" + std::to_string(ds), dom, std::to_string(cls), std::to_string(img),
                                        out == &a ? "tp" : "vp", i, u});
                    }
                }
            }
        }
        AggregateReport ra, rb;
        try {
            ra = aggregate_records("tp", a);
            rb = aggregate_records("vp", b);
        } catch (const Error&) {
            continue; // every record vacuous in some dataset
        }
        const auto o = oracle_ensemble(ra, rb);
        const auto p = oracle_ensemble_plus(a, b);
        for (const auto& d : o.datasets) {
            const double best = std::max(ra.find(d.dataset_id)->miou, rb.find(d.dataset_id)->miou);
            if (p.find(d.dataset_id)->miou < d.miou - eps || d.miou < best - eps)
                return {false, fmt::format("trial {}: dataset {}", trial, d.dataset_id)};
        }
        for (const auto& [dom, value] : o.domain_means) {
            const double best = std::max(ra.domain_means.at(dom), rb.domain_means.at(dom));
            if (p.domain_means.at(dom) < value - eps || value < best - eps)
                return {false, fmt::format("trial {}: domain {}", trial, to_string(dom))};
        }
        if (p.overall < o.overall - eps || o.overall < std::max(ra.overall, rb.overall) - eps)
            return {false, fmt::format("trial {}: overall", trial)};
    }
    return {true, "100/100 record sets"};
}

Outcome determinism() {
    const auto dir = test::scratch_dir("acc_determinism");
    test::DiskDatasetOptions a;
    a.dataset_id = "alpha";
    test::DiskDatasetOptions b;
    b.dataset_id = "beta";
    b.domain = Domain::Agriculture;
    b.seed = 9;
    const auto ma = test::write_synthetic_dataset(dir / "a", a).string();
    const auto mb = test::write_synthetic_dataset(dir / "b", b).string();
    std::vector<std::string> files;
    for (const auto& [name, workers] : {std::pair{"run1", "1"}, std::pair{"run2", "4"}}) {
        if (cli({"evaluate", "--manifest", ma, mb, "--seed", "123", "--workers", workers, "--strategy",
                 "promptmatcher", "--out", (dir / name).string()}) != 0)
            return {false, "evaluate failed"};
        files.push_back(slurp(dir / name / "records.csv"));
    }
    return {files[0] == files[1] && !files[0].empty(),
            fmt::format("records.csv {} bytes, identical: {}", files[0].size(), files[0] == files[1])};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"table-fixture reproduction", 1.0, table_fixture},
        {"diff-ranking fixture", 1.0, diff_fixture},
        {"matching-kernel oracle equivalence", 30.0, kernel_oracle},
        {"clustering oracle", 10.0, clustering_oracle},
        {"end-to-end synthetic suite", 60.0, end_to_end},
        {"fusion invariants", 60.0, fusion_invariants},
        {"oracle dominance", 10.0, oracle_dominance},
        {"determinism", 30.0, determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs < c.time_limit_s;
        const bool pass = o.pass && in_time;
        if (!pass) ++failures;
        fmt::print("{} {}: {} [{:.2f}s, limit {:.0f}s{}]\n", pass ? "PASS" : "FAIL", c.name, o.detail, secs,
                   c.time_limit_s, in_time ? "" : ", exceeded");
    }
    fmt::print("{}/{} criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
