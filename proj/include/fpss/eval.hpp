#pragma once

#include "fpss/ingest.hpp"
#include "fpss/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fpss {

/// Pixel counts of one prediction against its ground truth.
struct IoURecord {
    std::string dataset_id;
    Domain domain = Domain::General;
    ClassId class_id;
    std::string image_id;
    std::string method_id;
    std::uint64_t intersection = 0;
    std::uint64_t union_count = 0;

    /// Both masks empty; reported as IoU 1 and left out of class accumulation.
    bool vacuous() const noexcept { return union_count == 0; }
    double iou() const noexcept {
        return vacuous() ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_count);
    }
};

struct IoUResult {
    std::uint64_t intersection = 0;
    std::uint64_t union_count = 0;
    double value = 1.0;
    bool vacuous = true;
};

IoUResult compute_iou(const BinaryMask& pred, const BinaryMask& gt);
double iou(const BinaryMask& pred, const BinaryMask& gt);

struct DatasetScore {
    std::string dataset_id;
    Domain domain = Domain::General;
    double miou = 0.0;
    std::map<ClassId, double> per_class;
};

struct AggregateReport {
    std::string method_id;
    std::vector<DatasetScore> datasets;
    std::map<Domain, double> domain_means; // only domains with at least one dataset
    double overall = 0.0;                  // mean of the domain means

    const DatasetScore* find(std::string_view dataset_id) const noexcept;
};

/// Accumulated intersection / union per class over non-vacuous records.
std::map<ClassId, double> class_ious(std::span<const IoURecord> records);

/// Mean over classes of accumulated IoU; records must belong to one dataset and method.
double dataset_miou(std::span<const IoURecord> records);

/// Domain means and overall average over per-dataset scores.
AggregateReport aggregate(std::string method_id, std::vector<DatasetScore> datasets);

/// Groups records by dataset (first-appearance order) and aggregates.
AggregateReport aggregate_records(std::string method_id, std::span<const IoURecord> records);

/// Per dataset, the better of the two methods. Both reports must cover the same datasets.
AggregateReport oracle_ensemble(const AggregateReport& tp, const AggregateReport& vp);

enum class OraclePlusRule {
    /// Per (dataset, class), the per-image choice that maximises accumulated IoU.
    MaxAccumulatedIoU,
    /// Per image, the method with the higher per-image IoU.
    PerImageIoU,
};

/// Chosen record per (dataset, class, image); ties go to `tp`.
std::vector<IoURecord> oracle_plus_records(std::span<const IoURecord> tp, std::span<const IoURecord> vp,
                                           OraclePlusRule rule = OraclePlusRule::MaxAccumulatedIoU);

AggregateReport oracle_ensemble_plus(std::span<const IoURecord> tp, std::span<const IoURecord> vp,
                                     OraclePlusRule rule = OraclePlusRule::MaxAccumulatedIoU);

struct ClassIoU {
    std::string dataset_id;
    ClassId class_id;
    double iou = 0.0;
};

/// Accumulated per-class IoU for every (dataset, class) in the records.
std::vector<ClassIoU> per_class_table(std::span<const IoURecord> records);

struct ClassDiff {
    std::string dataset_id;
    ClassId class_id;
    double iou_tp = 0.0;
    double iou_vp = 0.0;
    double diff = 0.0; // iou_vp - iou_tp
};

/// Sorted by |iou_vp - iou_tp| descending, stable in the order of `tp`.
std::vector<ClassDiff> class_diff_ranking(std::span<const ClassIoU> tp, std::span<const ClassIoU> vp);

// CSV and table output.

inline constexpr std::string_view kRecordsHeader = "dataset,domain,class,image,method,intersection,union";
inline constexpr std::string_view kReportHeader = "method,level,name,domain,miou";
inline constexpr std::string_view kDiffHeader = "rank,dataset,class,iou_tp,iou_vp,diff,abs_diff";

void write_records_csv(std::ostream& out, std::span<const IoURecord> records);
std::vector<IoURecord> read_records_csv(std::istream& in);
std::vector<IoURecord> read_records_csv(const std::filesystem::path& path);

void write_report_csv(std::ostream& out, std::span<const AggregateReport> reports);
/// Fixed-width table: one row per method, five domain columns and the average, in percent.
std::string format_report_table(std::span<const AggregateReport> reports);

void write_diff_csv(std::ostream& out, std::span<const ClassDiff> ranking);

/// Splits one CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view value);

} // namespace fpss
