#include "fpss/eval.hpp"

#include "fpss/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

namespace fpss {

namespace {

using Int = __int128;

struct Accum {
    std::uint64_t intersection = 0;
    std::uint64_t union_count = 0;
};

using RecordKey = std::tuple<std::string, ClassId, std::string>;

RecordKey key_of(const IoURecord& r) {
    return {r.dataset_id, r.class_id, r.image_id};
}

std::map<RecordKey, const IoURecord*> index_records(std::span<const IoURecord> records, const char* side) {
    std::map<RecordKey, const IoURecord*> out;
    for (const auto& r : records) {
        if (!out.emplace(key_of(r), &r).second) {
            throw Error(ErrorCode::AlignmentMismatch, std::string(side) + " has two records for " + r.dataset_id +
                                                          "/" + r.class_id + "/" + r.image_id);
        }
    }
    return out;
}

double mean(std::span<const double> values) {
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    return sum / static_cast<double>(values.size());
}

// a.I / a.U > b.I / b.U with vacuous records counting as IoU 1.
int compare_iou(const IoURecord& a, const IoURecord& b) {
    const Int lhs = a.vacuous() ? Int{1} : Int(a.intersection);
    const Int lhs_den = a.vacuous() ? Int{1} : Int(a.union_count);
    const Int rhs = b.vacuous() ? Int{1} : Int(b.intersection);
    const Int rhs_den = b.vacuous() ? Int{1} : Int(b.union_count);
    const Int l = lhs * rhs_den;
    const Int r = rhs * lhs_den;
    return l > r ? 1 : (l < r ? -1 : 0);
}

// Selection over aligned (tp, vp) pairs of one class maximising sum(I) / sum(U). Returns true where vp wins.
std::vector<bool> best_accumulated_selection(const std::vector<std::pair<const IoURecord*, const IoURecord*>>& items) {
    std::vector<bool> pick_vp(items.size(), false);
    Int num = 0;
    Int den = 1;
    for (std::size_t iteration = 0; iteration <= items.size() + 1; ++iteration) {
        std::vector<bool> next(items.size(), false);
        Int n = 0;
        Int d = 0;
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& [a, b] = items[i];
            const Int va = Int(a->intersection) * den - num * Int(a->union_count);
            const Int vb = Int(b->intersection) * den - num * Int(b->union_count);
            next[i] = vb > va;
            const IoURecord* chosen = next[i] ? b : a;
            n += chosen->intersection;
            d += chosen->union_count;
        }
        if (d == 0) {
            return next;
        }
        pick_vp = next;
        if (!(n * den > num * d)) {
            break;
        }
        num = n;
        den = d;
    }
    return pick_vp;
}

std::string format_percent(double fraction) {
    return fmt::format("{:.2f}", fraction * 100.0);
}

} // namespace

IoUResult compute_iou(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.shape() != gt.shape()) {
        throw Error(ErrorCode::DimensionMismatch, "prediction and ground truth differ in shape");
    }
    IoUResult out;
    const auto p = pred.data();
    const auto g = gt.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        out.intersection += (p[i] & g[i]);
        out.union_count += (p[i] | g[i]);
    }
    out.vacuous = out.union_count == 0;
    out.value = out.vacuous ? 1.0 : static_cast<double>(out.intersection) / static_cast<double>(out.union_count);
    return out;
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    return compute_iou(pred, gt).value;
}

const DatasetScore* AggregateReport::find(std::string_view dataset_id) const noexcept {
    for (const auto& d : datasets) {
        if (d.dataset_id == dataset_id) {
            return &d;
        }
    }
    return nullptr;
}

std::map<ClassId, double> class_ious(std::span<const IoURecord> records) {
    std::map<ClassId, Accum> acc;
    for (const auto& r : records) {
        if (r.intersection > r.union_count) {
            throw Error(ErrorCode::InvalidArgument, "record " + r.dataset_id + "/" + r.image_id +
                                                        " has intersection above union");
        }
        if (r.vacuous()) {
            continue;
        }
        auto& a = acc[r.class_id];
        a.intersection += r.intersection;
        a.union_count += r.union_count;
    }
    std::map<ClassId, double> out;
    for (const auto& [cls, a] : acc) {
        out[cls] = static_cast<double>(a.intersection) / static_cast<double>(a.union_count);
    }
    return out;
}

double dataset_miou(std::span<const IoURecord> records) {
    if (records.empty()) {
        throw Error(ErrorCode::NoRecords, "dataset mIoU over an empty record set");
    }
    const auto per_class = class_ious(records);
    if (per_class.empty()) {
        throw Error(ErrorCode::NoRecords, "every record of " + records.front().dataset_id + " is vacuous");
    }
    std::vector<double> values;
    for (const auto& [_, v] : per_class) {
        values.push_back(v);
    }
    return mean(values);
}

AggregateReport aggregate(std::string method_id, std::vector<DatasetScore> datasets) {
    AggregateReport report;
    report.method_id = std::move(method_id);
    report.datasets = std::move(datasets);
    std::vector<double> domain_values;
    for (Domain domain : kAllDomains) {
        std::vector<double> values;
        for (const auto& d : report.datasets) {
            if (d.domain == domain) {
                values.push_back(d.miou);
            }
        }
        if (!values.empty()) {
            report.domain_means[domain] = mean(values);
            domain_values.push_back(report.domain_means[domain]);
        }
    }
    report.overall = domain_values.empty() ? 0.0 : mean(domain_values);
    return report;
}

AggregateReport aggregate_records(std::string method_id, std::span<const IoURecord> records) {
    if (records.empty()) {
        throw Error(ErrorCode::NoRecords, "no records to aggregate");
    }
    std::vector<std::string> order;
    std::map<std::string, std::vector<IoURecord>> by_dataset;
    for (const auto& r : records) {
        auto [it, inserted] = by_dataset.try_emplace(r.dataset_id);
        if (inserted) {
            order.push_back(r.dataset_id);
        } else if (it->second.front().domain != r.domain) {
            throw Error(ErrorCode::SchemaViolation, "dataset " + r.dataset_id + " appears under two domains");
        }
        it->second.push_back(r);
    }
    std::vector<DatasetScore> scores;
    for (const auto& id : order) {
        const auto& rs = by_dataset[id];
        scores.push_back({id, rs.front().domain, dataset_miou(rs), class_ious(rs)});
    }
    return aggregate(std::move(method_id), std::move(scores));
}

AggregateReport oracle_ensemble(const AggregateReport& tp, const AggregateReport& vp) {
    if (tp.datasets.size() != vp.datasets.size()) {
        throw Error(ErrorCode::DatasetMismatch, "methods cover different numbers of datasets");
    }
    std::vector<DatasetScore> best;
    for (const auto& a : tp.datasets) {
        const DatasetScore* b = vp.find(a.dataset_id);
        if (b == nullptr) {
            throw Error(ErrorCode::DatasetMismatch, "dataset " + a.dataset_id + " is missing from " + vp.method_id);
        }
        if (b->domain != a.domain) {
            throw Error(ErrorCode::DatasetMismatch, "dataset " + a.dataset_id + " has conflicting domains");
        }
        best.push_back(b->miou > a.miou ? *b : a);
    }
    return aggregate("oracle", std::move(best));
}

std::vector<IoURecord> oracle_plus_records(std::span<const IoURecord> tp, std::span<const IoURecord> vp,
                                           OraclePlusRule rule) {
    const auto tp_index = index_records(tp, "TP records");
    const auto vp_index = index_records(vp, "VP records");
    if (tp_index.size() != vp_index.size()) {
        throw Error(ErrorCode::AlignmentMismatch, "record sets differ in size");
    }
    // Grouped per (dataset, class) in key order.
    std::map<std::pair<std::string, ClassId>, std::vector<std::pair<const IoURecord*, const IoURecord*>>> groups;
    for (const auto& [key, a] : tp_index) {
        auto it = vp_index.find(key);
        if (it == vp_index.end()) {
            throw Error(ErrorCode::AlignmentMismatch, "no VP record for " + std::get<0>(key) + "/" +
                                                          std::get<1>(key) + "/" + std::get<2>(key));
        }
        if (it->second->domain != a->domain) {
            throw Error(ErrorCode::AlignmentMismatch, "domain differs for dataset " + a->dataset_id);
        }
        groups[{std::get<0>(key), std::get<1>(key)}].emplace_back(a, it->second);
    }

    std::map<RecordKey, IoURecord> chosen;
    for (const auto& [_, items] : groups) {
        std::vector<bool> pick_vp(items.size(), false);
        if (rule == OraclePlusRule::MaxAccumulatedIoU) {
            pick_vp = best_accumulated_selection(items);
        } else {
            for (std::size_t i = 0; i < items.size(); ++i) {
                pick_vp[i] = compare_iou(*items[i].second, *items[i].first) > 0;
            }
        }
        for (std::size_t i = 0; i < items.size(); ++i) {
            IoURecord r = pick_vp[i] ? *items[i].second : *items[i].first;
            r.method_id = "oracle+";
            chosen.emplace(key_of(r), std::move(r));
        }
    }
    // Emit in the TP file order.
    std::vector<IoURecord> out;
    out.reserve(tp.size());
    for (const auto& r : tp) {
        out.push_back(chosen.at(key_of(r)));
    }
    return out;
}

AggregateReport oracle_ensemble_plus(std::span<const IoURecord> tp, std::span<const IoURecord> vp,
                                     OraclePlusRule rule) {
    const auto picked = oracle_plus_records(tp, vp, rule);
    return aggregate_records("oracle+", picked);
}

std::vector<ClassIoU> per_class_table(std::span<const IoURecord> records) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<IoURecord>> by_dataset;
    for (const auto& r : records) {
        auto [it, inserted] = by_dataset.try_emplace(r.dataset_id);
        if (inserted) {
            order.push_back(r.dataset_id);
        }
        it->second.push_back(r);
    }
    std::vector<ClassIoU> out;
    for (const auto& id : order) {
        // Class order follows first appearance within the dataset.
        std::vector<ClassId> classes;
        for (const auto& r : by_dataset[id]) {
            if (std::find(classes.begin(), classes.end(), r.class_id) == classes.end()) {
                classes.push_back(r.class_id);
            }
        }
        const auto values = class_ious(by_dataset[id]);
        for (const auto& cls : classes) {
            if (auto it = values.find(cls); it != values.end()) {
                out.push_back({id, cls, it->second});
            }
        }
    }
    return out;
}

std::vector<ClassDiff> class_diff_ranking(std::span<const ClassIoU> tp, std::span<const ClassIoU> vp) {
    std::map<std::pair<std::string, ClassId>, double> vp_values;
    for (const auto& c : vp) {
        if (!vp_values.emplace(std::make_pair(c.dataset_id, c.class_id), c.iou).second) {
            throw Error(ErrorCode::AlignmentMismatch, "VP lists class " + c.class_id + " twice");
        }
    }
    if (vp_values.size() != tp.size()) {
        throw Error(ErrorCode::AlignmentMismatch, "TP and VP list different classes");
    }
    std::vector<ClassDiff> out;
    for (const auto& c : tp) {
        auto it = vp_values.find({c.dataset_id, c.class_id});
        if (it == vp_values.end()) {
            throw Error(ErrorCode::AlignmentMismatch, "class " + c.class_id + " of " + c.dataset_id +
                                                          " has no VP value");
        }
        out.push_back({c.dataset_id, c.class_id, c.iou, it->second, it->second - c.iou});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const ClassDiff& a, const ClassDiff& b) { return std::abs(a.diff) > std::abs(b.diff); });
    return out;
}

std::string csv_field(std::string_view value) {
    if (value.find_first_of(",\"\n\r") == std::string_view::npos) {
        return std::string(value);
    }
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else if (c != '\r') {
            fields.back() += c;
        }
    }
    return fields;
}

void write_records_csv(std::ostream& out, std::span<const IoURecord> records) {
    out << kRecordsHeader << '\n';
    for (const auto& r : records) {
        out << csv_field(r.dataset_id) << ',' << to_string(r.domain) << ',' << csv_field(r.class_id) << ','
            << csv_field(r.image_id) << ',' << csv_field(r.method_id) << ',' << r.intersection << ','
            << r.union_count << '\n';
    }
}

std::vector<IoURecord> read_records_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorCode::SchemaViolation, "records file is empty");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kRecordsHeader) {
        throw Error(ErrorCode::SchemaViolation, "unexpected records header '" + line + "'");
    }
    std::vector<IoURecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 7) {
            throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + " has " +
                                                        std::to_string(f.size()) + " fields");
        }
        IoURecord r;
        r.dataset_id = f[0];
        r.domain = parse_domain(f[1]);
        r.class_id = f[2];
        r.image_id = f[3];
        r.method_id = f[4];
        try {
            std::size_t used = 0;
            r.intersection = std::stoull(f[5], &used);
            if (used != f[5].size()) throw std::invalid_argument("trailing characters");
            r.union_count = std::stoull(f[6], &used);
            if (used != f[6].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": bad pixel counts");
        }
        if (r.intersection > r.union_count) {
            throw Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": intersection > union");
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<IoURecord> read_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoFailure, "cannot open records file " + path.string());
    }
    return read_records_csv(in);
}

void write_report_csv(std::ostream& out, std::span<const AggregateReport> reports) {
    out << kReportHeader << '\n';
    for (const auto& rep : reports) {
        const std::string method = csv_field(rep.method_id);
        for (const auto& d : rep.datasets) {
            out << method << ",dataset," << csv_field(d.dataset_id) << ',' << to_string(d.domain) << ','
                << format_percent(d.miou) << '\n';
        }
        for (const auto& [domain, value] : rep.domain_means) {
            out << method << ",domain," << to_string(domain) << ',' << to_string(domain) << ','
                << format_percent(value) << '\n';
        }
        out << method << ",overall,Average,," << format_percent(rep.overall) << '\n';
    }
}

std::string format_report_table(std::span<const AggregateReport> reports) {
    std::size_t name_width = 6;
    for (const auto& rep : reports) {
        name_width = std::max(name_width, rep.method_id.size());
    }
    std::string out = fmt::format("{:<{}} |", "", name_width);
    for (Domain d : kAllDomains) {
        out += fmt::format(" {:>11}", to_string(d));
    }
    out += " | Average\n";
    out += std::string(name_width + 2 + 12 * 5, '-') + "+--------\n";
    for (const auto& rep : reports) {
        out += fmt::format("{:<{}} |", rep.method_id, name_width);
        for (Domain d : kAllDomains) {
            auto it = rep.domain_means.find(d);
            out += it == rep.domain_means.end() ? fmt::format(" {:>11}", "-")
                                                : fmt::format(" {:>11.1f}", it->second * 100.0);
        }
        out += fmt::format(" | {:>7.1f}\n", rep.overall * 100.0);
    }
    return out;
}

void write_diff_csv(std::ostream& out, std::span<const ClassDiff> ranking) {
    out << kDiffHeader << '\n';
    std::size_t rank = 0;
    for (const auto& d : ranking) {
        out << ++rank << ',' << csv_field(d.dataset_id) << ',' << csv_field(d.class_id) << ','
            << format_percent(d.iou_tp) << ',' << format_percent(d.iou_vp) << ',' << format_percent(d.diff) << ','
            << format_percent(std::abs(d.diff)) << '\n';
    }
}

} // namespace fpss
