#include "distillvol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "distillvol/errors.hpp"
#include "distillvol/util.hpp"

namespace dv {

double dice_score(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size())
        throw ShapeError("dice_score: mask sizes differ (" + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()) + ")");
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::uint8_t pv = pred[i], gv = gt[i];
        if (pv > 1 || gv > 1)
            throw Error("dice_score: non-binary mask value " + std::to_string(pv > 1 ? pv : gv) +
                        " at voxel " + std::to_string(i));
        a += pv;
        b += gv;
        inter += pv & gv;
    }
    if (a == 0 && b == 0) return 1.0;
    if (a == 0 || b == 0) return 0.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

double percentile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw Error("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(values.size() - 1, lo + 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

RegionSummary summarize_one(const std::vector<double>& v) {
    RegionSummary s;
    double sum = 0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    s.median = percentile_linear(v, 0.5);
    s.q1 = percentile_linear(v, 0.25);
    s.q3 = percentile_linear(v, 0.75);
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    return s;
}

}  // namespace

MetricsSummary summarize_metrics(const std::vector<CaseDice>& records) {
    if (records.empty()) throw Error("summarize_metrics: no records");
    std::vector<double> wt, tc, et;
    wt.reserve(records.size());
    tc.reserve(records.size());
    et.reserve(records.size());
    for (const auto& r : records) {
        wt.push_back(r.wt);
        tc.push_back(r.tc);
        et.push_back(r.et);
    }
    MetricsSummary s;
    s.wt = summarize_one(wt);
    s.tc = summarize_one(tc);
    s.et = summarize_one(et);
    s.case_count = records.size();
    return s;
}

void write_per_case_csv(const std::filesystem::path& path, const std::vector<CaseDice>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "case_id,dice_wt,dice_tc,dice_et\n";
    for (const auto& r : records)
        os << r.case_id << ',' << fmt_double(r.wt) << ',' << fmt_double(r.tc) << ','
           << fmt_double(r.et) << '\n';
}

std::vector<CaseDice> read_per_case_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "case_id,dice_wt,dice_tc,dice_et")
        throw IoError("unexpected per-case CSV header in " + path.string());
    std::vector<CaseDice> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        CaseDice r;
        std::string field;
        std::getline(ls, r.case_id, ',');
        std::getline(ls, field, ',');
        r.wt = std::stod(field);
        std::getline(ls, field, ',');
        r.tc = std::stod(field);
        std::getline(ls, field, ',');
        r.et = std::stod(field);
        out.push_back(std::move(r));
    }
    return out;
}

void write_boxplot_csv(const std::filesystem::path& path, const MetricsSummary& summary) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << "region,min,q1,median,q3,max\n";
    const std::pair<const char*, const RegionSummary*> rows[] = {
        {"WT", &summary.wt}, {"TC", &summary.tc}, {"ET", &summary.et}};
    for (const auto& [name, r] : rows)
        os << name << ',' << fmt_double(r->min) << ',' << fmt_double(r->q1) << ','
           << fmt_double(r->median) << ',' << fmt_double(r->q3) << ',' << fmt_double(r->max)
           << '\n';
}

std::string format_metrics_table(const std::string& method, const MetricsSummary& summary) {
    char buf[256];
    std::string out = "Method            | Dice ET | Dice WT | Dice TC\n";
    out += "------------------|---------|---------|--------\n";
    std::snprintf(buf, sizeof(buf), "%-17s | %7.4f | %7.4f | %7.4f\n", method.c_str(),
                  summary.et.mean, summary.wt.mean, summary.tc.mean);
    out += buf;
    return out;
}

}  // namespace dv
