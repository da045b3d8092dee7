#include "rwf/report.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "rwf/config.hpp"

namespace rwf::report {

using nlohmann::json;

namespace {

json stat_json(const evaluation::Stat& s) {
    return {{"mean", s.mean}, {"std", s.std}};
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string row(const evaluation::ExperimentReport& r, const evaluation::SeedRun& run) {
    const auto& e = r.config;
    const auto m = e.resolved_model();
    std::ostringstream os;
    os << to_string(e.method) << ',' << m.routed_layers << ',' << backbone::to_string(m.placement) << ','
       << e.stream.tasks << ',' << fmt(e.stream.few_shot_fraction) << ',' << run.seed << ',' << fmt(run.a_final) << ','
       << (run.forgetting ? fmt(*run.forgetting) : "") << '\n';
    return os.str();
}

void require(bool ok, const std::string& field) {
    if (!ok) throw std::invalid_argument("report: missing or malformed field '" + field + "'");
}

std::size_t count_columns(const std::string& line) {
    return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

json to_json(const evaluation::ExperimentReport& r) {
    json runs = json::array();
    for (const auto& run : r.runs) {
        const std::size_t T = run.acc.num_tasks();
        json matrix = json::array();
        for (std::size_t i = 0; i < T; ++i) {
            json line = json::array();
            for (std::size_t t = 0; t < T; ++t)
                line.push_back(t >= i && run.acc.has(i, t) ? json(run.acc.at(i, t)) : json(nullptr));
            matrix.push_back(std::move(line));
        }
        runs.push_back({
            {"seed", run.seed},
            {"accuracy_matrix", std::move(matrix)},
            {"a_final", run.a_final},
            {"forgetting", run.forgetting ? json(*run.forgetting) : json(nullptr)},
            {"samples_trained", run.samples_trained},
            {"expected_samples", run.expected_samples},
            {"task_losses", run.task_losses},
        });
    }
    return {
        {"version", kReportVersion},
        {"config", config::to_json(r.config)},
        {"runs", std::move(runs)},
        {"a_final", stat_json(r.a_final)},
        {"forgetting", r.forgetting ? stat_json(*r.forgetting) : json(nullptr)},
        {"params",
         {{"total", r.params.total}, {"trainable", r.params.trainable}, {"trainable_fraction", r.params.trainable_fraction}}},
        {"samples_trained", r.samples_trained},
        {"metadata", {{"wall_clock_seconds", r.wall_clock_seconds}}},
    };
}

void validate_report_json(const json& doc) {
    require(doc.is_object(), "<root>");
    require(doc.value("version", 0) == kReportVersion, "version");
    require(doc.contains("config") && doc["config"].is_object(), "config");
    config::run_spec_from_json(doc["config"]);
    require(doc.contains("runs") && doc["runs"].is_array() && !doc["runs"].empty(), "runs");
    const std::size_t T = doc["config"]["stream"]["tasks"].get<std::size_t>();
    for (const auto& run : doc["runs"]) {
        require(run.contains("seed") && run["seed"].is_number_unsigned(), "runs[].seed");
        require(run.contains("a_final") && run["a_final"].is_number(), "runs[].a_final");
        require(run.contains("forgetting") && (run["forgetting"].is_number() || run["forgetting"].is_null()),
                "runs[].forgetting");
        require(run.contains("samples_trained") && run["samples_trained"].is_number_unsigned(), "runs[].samples_trained");
        require(run.contains("expected_samples") && run["expected_samples"].is_number_unsigned(),
                "runs[].expected_samples");
        require(run.contains("task_losses") && run["task_losses"].is_array(), "runs[].task_losses");
        const auto& m = run.value("accuracy_matrix", json());
        require(m.is_array() && m.size() == T, "runs[].accuracy_matrix");
        for (std::size_t i = 0; i < T; ++i) {
            require(m[i].is_array() && m[i].size() == T, "runs[].accuracy_matrix");
            for (std::size_t t = 0; t < T; ++t) {
                const auto& c = m[i][t];
                require(c.is_null() || (t >= i && c.is_number() && c.get<double>() >= 0.0 && c.get<double>() <= 1.0),
                        "runs[].accuracy_matrix");
            }
            require(m[i][T - 1].is_number(), "runs[].accuracy_matrix (last column)");
        }
    }
    for (const char* k : {"a_final"}) require(doc.contains(k) && doc[k].contains("mean") && doc[k].contains("std"), k);
    require(doc.contains("forgetting") && (doc["forgetting"].is_null() || doc["forgetting"].contains("mean")),
            "forgetting");
    require(doc.contains("params") && doc["params"].contains("total") && doc["params"].contains("trainable"), "params");
    require(doc.contains("samples_trained") && doc["samples_trained"].is_number_unsigned(), "samples_trained");
    require(doc.contains("metadata") && doc["metadata"].is_object(), "metadata");
}

std::string summary_csv(const evaluation::ExperimentReport& r, bool header) {
    std::string out = header ? std::string(kSummaryHeader) + "\n" : "";
    for (const auto& run : r.runs) out += row(r, run);
    return out;
}

std::string sweep_rows(const std::string& axis, const std::string& value, const evaluation::ExperimentReport& r) {
    std::string out;
    for (const auto& run : r.runs) out += axis + "," + value + "," + row(r, run);
    return out;
}

std::size_t validate_csv(const std::string& csv, const std::string& header) {
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != header) throw std::invalid_argument("csv: header mismatch");
    const std::size_t cols = count_columns(header);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (count_columns(line) != cols)
            throw std::invalid_argument("csv: row " + std::to_string(rows + 1) + " has the wrong number of columns");
        ++rows;
    }
    return rows;
}

}  // namespace rwf::report
