#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwf/evaluation.hpp"

namespace rwf::report {

inline constexpr int kReportVersion = 1;

// Full report: config echo, per-seed accuracy matrices (null for cells that
// were never evaluated), aggregates. Timing lives under "metadata" so that
// reruns differ only there.
nlohmann::json to_json(const evaluation::ExperimentReport& r);

// Throws std::invalid_argument naming the first offending field.
void validate_report_json(const nlohmann::json& doc);

// One row per seed.
inline constexpr const char* kSummaryHeader = "method,k,placement,T,fraction,seed,a_final,forgetting";
std::string summary_csv(const evaluation::ExperimentReport& r, bool header = true);

// Sweep rows carry the axis name and value in front of the summary columns.
inline constexpr const char* kSweepHeader = "axis,value,method,k,placement,T,fraction,seed,a_final,forgetting";
std::string sweep_rows(const std::string& axis, const std::string& value, const evaluation::ExperimentReport& r);

// Checks a CSV document against `header` and the column count; returns the
// number of data rows. Throws std::invalid_argument.
std::size_t validate_csv(const std::string& csv, const std::string& header);

}  // namespace rwf::report
