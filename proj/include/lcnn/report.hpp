#ifndef LCNN_REPORT_HPP
#define LCNN_REPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcnn/errors.hpp"

namespace lcnn {

struct ComparisonRow {
    std::string label;
    std::string source; // report path
    double mean_accuracy = 0.0;
    double absolute_gap = 0.0;               // mean - reference mean
    std::optional<double> relative_change;   // (mean - ref) / ref; none when ref == 0
    std::size_t rank = 0;                    // 1 = best
};

struct Comparison {
    std::string metric; // "test_accuracy" or "validation_accuracy"
    std::string reference_label;
    double reference_mean = 0.0;
    std::vector<ComparisonRow> rows; // ranked
};

inline nlohmann::json read_summary(const std::filesystem::path& p) {
    auto path = std::filesystem::is_directory(p) ? p / "summary.json" : p;
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        if (j.value("format", "") != "lcnn-report-1") throw FormatError(path.string() + ": not a run summary");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

/// Side-by-side means against the first report. Requires identical dataset
/// provenance; uses test accuracy when every report has one, otherwise the
/// mean validation accuracy. Ranked best first, ties by label.
inline Comparison compare_summaries(const std::vector<nlohmann::json>& reports, const std::vector<std::string>& sources) {
    if (reports.size() < 2) throw UsageError("compare needs at least two reports");
    for (std::size_t i = 1; i < reports.size(); ++i) {
        if (reports[i].at("provenance") != reports[0].at("provenance") ||
            reports[i].at("test_provenance") != reports[0].at("test_provenance")) {
            throw ConsistencyError("comparison refused: " + sources[i] + " was trained on different data than " + sources[0]);
        }
    }
    bool all_test = true;
    for (const auto& r : reports) all_test = all_test && !r.at("mean").at("test_accuracy").is_null();
    Comparison cmp;
    cmp.metric = all_test ? "test_accuracy" : "validation_accuracy";
    cmp.reference_label = reports[0].at("label").get<std::string>();
    cmp.reference_mean = reports[0].at("mean").at(cmp.metric).get<double>();
    for (std::size_t i = 0; i < reports.size(); ++i) {
        ComparisonRow row;
        row.label = reports[i].at("label").get<std::string>();
        row.source = sources[i];
        row.mean_accuracy = reports[i].at("mean").at(cmp.metric).get<double>();
        row.absolute_gap = row.mean_accuracy - cmp.reference_mean;
        if (cmp.reference_mean != 0.0) row.relative_change = row.absolute_gap / cmp.reference_mean;
        cmp.rows.push_back(row);
    }
    std::stable_sort(cmp.rows.begin(), cmp.rows.end(), [](const auto& a, const auto& b) {
        if (a.mean_accuracy != b.mean_accuracy) return a.mean_accuracy > b.mean_accuracy;
        return a.label < b.label;
    });
    for (std::size_t i = 0; i < cmp.rows.size(); ++i) cmp.rows[i].rank = i + 1;
    return cmp;
}

inline Comparison compare_runs(const std::vector<std::filesystem::path>& paths) {
    std::vector<nlohmann::json> reports;
    std::vector<std::string> sources;
    for (const auto& p : paths) {
        reports.push_back(read_summary(p));
        sources.push_back(p.string());
    }
    return compare_summaries(reports, sources);
}

inline nlohmann::json to_json(const Comparison& c) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : c.rows) {
        rows.push_back({{"rank", r.rank},
                        {"label", r.label},
                        {"source", r.source},
                        {"mean_accuracy", r.mean_accuracy},
                        {"absolute_gap_points", r.absolute_gap * 100.0},
                        {"relative_change_percent",
                         r.relative_change ? nlohmann::json(*r.relative_change * 100.0) : nlohmann::json(nullptr)}});
    }
    return {{"metric", c.metric}, {"reference", c.reference_label}, {"reference_mean", c.reference_mean}, {"rows", rows}};
}

/// Fixed-width text table.
inline std::string format_table(const Comparison& c) {
    std::size_t width = 5;
    for (const auto& r : c.rows) width = std::max(width, r.label.size());
    std::string out = "metric: mean " + c.metric + ", reference: " + c.reference_label + "\n";
    char line[512];
    std::snprintf(line, sizeof line, "%-4s  %-*s  %8s  %12s  %12s\n", "rank", int(width), "label", "mean", "gap (pts)",
                  "relative (%)");
    out += line;
    for (const auto& r : c.rows) {
        char rel[32];
        if (r.relative_change) {
            std::snprintf(rel, sizeof rel, "%+.2f", *r.relative_change * 100.0);
        } else {
            std::snprintf(rel, sizeof rel, "n/a");
        }
        std::snprintf(line, sizeof line, "%-4zu  %-*s  %8.4f  %+12.2f  %12s\n", r.rank, int(width), r.label.c_str(),
                      r.mean_accuracy, r.absolute_gap * 100.0, rel);
        out += line;
    }
    return out;
}

} // namespace lcnn

#endif // LCNN_REPORT_HPP
