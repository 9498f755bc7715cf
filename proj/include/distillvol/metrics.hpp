#pragma once

// Evaluation metrics and the per-region summaries behind the report tables
// and boxplot export.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dv {

// 2|A∩B| / (|A|+|B|) over binary masks. Borderline cases follow challenge
// scoring: both empty -> 1.0, exactly one empty -> 0.0. Throws Error on
// non-binary input.
double dice_score(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt);

struct CaseDice {
    std::string case_id;
    double wt = 0, tc = 0, et = 0;
};

// Quartiles use linear interpolation at p*(n-1) over the sorted sample.
struct RegionSummary {
    double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
};

struct MetricsSummary {
    RegionSummary wt, tc, et;
    std::size_t case_count = 0;
};

// Throws Error on empty input.
MetricsSummary summarize_metrics(const std::vector<CaseDice>& records);

double percentile_linear(std::vector<double> values, double p);  // p in [0,1]

// CSV with header case_id,dice_wt,dice_tc,dice_et.
void write_per_case_csv(const std::filesystem::path& path, const std::vector<CaseDice>& records);
std::vector<CaseDice> read_per_case_csv(const std::filesystem::path& path);

// CSV with header region,min,q1,median,q3,max (rows WT, TC, ET).
void write_boxplot_csv(const std::filesystem::path& path, const MetricsSummary& summary);

// Plain-text table with the column order Method | Dice ET | Dice WT | Dice TC.
std::string format_metrics_table(const std::string& method, const MetricsSummary& summary);

}  // namespace dv
