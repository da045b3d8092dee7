#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "rwf/checkpoint.hpp"
#include "rwf/config.hpp"
#include "rwf/report.hpp"
#include "rwf/verify.hpp"

namespace fs = std::filesystem;
using namespace rwf;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitFailure = 2;

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw ConfigError("config file '" + path.string() + "' is not a JSON object");
    return doc;
}

std::string percent(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v;
    return os.str();
}

void print_report_line(const std::string& label, const evaluation::ExperimentReport& r) {
    std::cout << label << "A_Final " << percent(r.a_final.mean) << " +/- " << percent(r.a_final.std);
    if (r.forgetting) std::cout << "  Forgetting " << percent(r.forgetting->mean) << " +/- " << percent(r.forgetting->std);
    std::cout << "  seeds " << r.runs.size() << "  trainable " << r.params.trainable << "/" << r.params.total
              << "  samples " << r.samples_trained << "  " << std::fixed << std::setprecision(1)
              << r.wall_clock_seconds << "s\n"
              << std::defaultfloat;
}

void write_outputs(const fs::path& out, const config::RunSpec& spec, const evaluation::ExperimentReport& r) {
    fs::create_directories(out);
    config::RunSpec resolved = spec;
    resolved.out_dir = out.string();
    write_file(out / "resolved_config.json", config::to_json(resolved).dump(2) + "\n");
    const json doc = report::to_json(r);
    report::validate_report_json(doc);
    write_file(out / "report.json", doc.dump(2) + "\n");
    write_file(out / "summary.csv", report::summary_csv(r));
    checkpoint::write(out / "checkpoint.bin", *r.final_model, r.final_opt ? &*r.final_opt : nullptr);
}

int cmd_run(const std::string& path, const std::vector<std::string>& overrides, const std::string& out_flag) {
    const auto spec = config::load_run_spec(path, overrides, config::seed_from_env());
    const fs::path out = out_flag.empty() ? fs::path(spec.out_dir) : fs::path(out_flag);
    const auto r = evaluation::run_experiment(spec.experiment);
    write_outputs(out, spec, r);
    print_report_line(std::string(evaluation::to_string(spec.experiment.method)) + "  ", r);
    std::cout << "wrote " << (out / "report.json").string() << "\n";
    return kExitOk;
}

void print_suite(const verify::SuiteResult& s) {
    std::cout << "[" << s.suite << "] " << std::fixed << std::setprecision(2) << s.seconds << "s\n" << std::defaultfloat;
    for (const auto& c : s.checks)
        std::cout << "  " << (c.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(58) << c.name << std::right << "  "
                  << c.detail << "\n";
}

int cmd_verify(const std::string& suite) {
    std::vector<verify::SuiteResult> results;
    if (suite == "energy" || suite == "all") results.push_back(verify::energy());
    if (suite == "gradients" || suite == "all") results.push_back(verify::gradients());
    if (suite == "invariants" || suite == "all") results.push_back(verify::invariants());
    if (suite == "all") {
        results.push_back(verify::smoothness());
        results.push_back(verify::parameters());
    }
    bool ok = true;
    for (const auto& r : results) {
        print_suite(r);
        ok = ok && r.pass();
    }
    std::cout << (ok ? "all checks passed" : "verification FAILED") << "\n";
    return ok ? kExitOk : kExitFailure;
}

// "[0,1,3]" or "0,1,3" or "first,last".
std::vector<json> parse_values(const std::string& text) {
    json list = json::parse(text, nullptr, false);
    if (!list.is_discarded() && list.is_array() && !list.empty()) return list;
    std::vector<json> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw ConfigError("sweep: empty value in '" + text + "'");
        json v = json::parse(item, nullptr, false);
        out.push_back(v.is_discarded() ? json(item) : v);
    }
    if (out.empty()) throw ConfigError("sweep: no values given");
    return out;
}

std::string axis_key(const std::string& axis) {
    if (axis == "k") return "model.routed_layers";
    if (axis == "placement") return "model.placement";
    if (axis == "fraction") return "stream.few_shot_fraction";
    if (axis == "tasks") return "stream.tasks";
    throw ConfigError("sweep: unknown axis '" + axis + "' (expected k, placement, fraction or tasks)");
}

int cmd_sweep(const std::string& path, const std::string& axis, const std::string& values,
              const std::vector<std::string>& overrides, const std::string& out_flag) {
    const std::string key = axis_key(axis);
    json base = read_json_file(path);
    if (const auto seed = config::seed_from_env(); seed && !base.contains("seeds")) base["seeds"] = json::array({*seed});
    for (const auto& o : overrides) config::apply_override(base, o);

    // Validate every point before running any of them.
    std::vector<std::pair<std::string, config::RunSpec>> points;
    for (const auto& v : parse_values(values)) {
        json doc = base;
        config::apply_override(doc, key + "=" + v.dump());
        const std::string label = v.is_string() ? v.get<std::string>() : v.dump();
        points.emplace_back(label, config::run_spec_from_json(doc));
    }
    const fs::path out = out_flag.empty() ? fs::path(points.front().second.out_dir) : fs::path(out_flag);
    std::string csv = std::string(report::kSweepHeader) + "\n";
    for (const auto& [label, spec] : points) {
        const auto r = evaluation::run_experiment(spec.experiment);
        write_outputs(out / (axis + "_" + label), spec, r);
        csv += report::sweep_rows(axis, label, r);
        print_report_line(axis + "=" + label + "  ", r);
    }
    fs::create_directories(out);
    write_file(out / ("sweep_" + axis + ".csv"), csv);
    std::cout << "wrote " << (out / ("sweep_" + axis + ".csv")).string() << "\n";
    return kExitOk;
}

int cmd_probe(const std::string& path, const std::vector<std::string>& overrides, const std::string& ckpt,
              const std::string& betas_text, std::size_t samples, double delta, const std::string& out_flag) {
    const auto spec = config::load_run_spec(path, overrides, config::seed_from_env());
    const auto& e = spec.experiment;
    const std::uint64_t seed = e.seeds.front();
    backbone::Model model;
    if (!ckpt.empty()) {
        model = checkpoint::read(ckpt).model;
    } else {
        RngStream rng = evaluation::model_rng(seed);
        model = backbone::build_model(e.resolved_model(), rng);
    }
    std::vector<double> betas;
    for (const auto& v : parse_values(betas_text)) {
        if (!v.is_number() || !(v.get<double>() > 0.0)) throw ConfigError("probe: betas must be positive numbers");
        betas.push_back(v.get<double>());
    }
    stream::StreamConfig sc = e.stream;
    sc.seed = seed;
    const auto stream = stream::make_synthetic_stream(sc);
    const Matrix& x = stream.tasks().front().test.front().tokens;
    if (x.rows() != model.config.tokens || x.cols() != model.config.input_dim)
        throw ConfigError("probe: checkpoint input shape does not match the configured stream");

    const auto rows = verify::probe_model(model, x, betas, samples, delta, seed);
    const std::string csv = verify::probe_csv(rows);
    if (rows.empty()) std::cerr << "note: model has no routing layers (k=0); the probe output is empty\n";
    if (out_flag.empty()) {
        std::cout << csv;
    } else {
        fs::create_directories(out_flag);
        write_file(fs::path(out_flag) / "probe.csv", csv);
        std::cout << "wrote " << (fs::path(out_flag) / "probe.csv").string() << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Routing-without-forgetting experiments"};
    app.require_subcommand(1);

    std::string config_path, out, axis, values, suite, ckpt, betas = "0.01,1,10";
    std::vector<std::string> overrides;
    std::size_t probe_samples = 1000;
    double probe_delta = 1e-3;

    auto* run = app.add_subcommand("run", "train and evaluate every seed; write report, summary, checkpoint");
    run->add_option("config", config_path, "JSON config")->required();
    run->add_option("--override,-o", overrides, "dotted key=value, repeatable");
    run->add_option("--out", out, "output directory (default: config out_dir)");

    auto* ver = app.add_subcommand("verify", "run a verification suite");
    ver->add_option("suite", suite, "energy | gradients | invariants | all")
        ->required()
        ->check(CLI::IsMember({"energy", "gradients", "invariants", "all"}));

    auto* sweep = app.add_subcommand("sweep", "run one experiment per axis value");
    sweep->add_option("config", config_path, "JSON config")->required();
    sweep->add_option("--axis", axis, "k | placement | fraction | tasks")->required();
    sweep->add_option("--values", values, "comma list or JSON array")->required();
    sweep->add_option("--override,-o", overrides, "dotted key=value, repeatable");
    sweep->add_option("--out", out, "output directory (default: config out_dir)");

    auto* probe = app.add_subcommand("probe", "Lipschitz probe of every router across beta values");
    probe->add_option("config", config_path, "JSON config")->required();
    probe->add_option("--override,-o", overrides, "dotted key=value, repeatable");
    probe->add_option("--checkpoint", ckpt, "probe a saved model instead of a fresh one");
    probe->add_option("--betas", betas, "comma list or JSON array");
    probe->add_option("--samples", probe_samples, "perturbations per layer and beta");
    probe->add_option("--delta", probe_delta, "perturbation norm");
    probe->add_option("--out", out, "write probe.csv here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) return cmd_run(config_path, overrides, out);
        if (*ver) return cmd_verify(suite);
        if (*sweep) return cmd_sweep(config_path, axis, values, overrides, out);
        if (*probe) return cmd_probe(config_path, overrides, ckpt, betas, probe_samples, probe_delta, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
