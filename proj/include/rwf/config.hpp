#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwf/evaluation.hpp"

namespace rwf::config {

inline constexpr int kConfigVersion = 1;

// A parsed run configuration: the experiment plus where to write outputs.
struct RunSpec {
    evaluation::ExperimentConfig experiment;
    std::string out_dir = "out";
};

nlohmann::json to_json(const backbone::ModelConfig& m);
nlohmann::json to_json(const stream::StreamConfig& s);
nlohmann::json to_json(const evaluation::ExperimentConfig& e);
nlohmann::json to_json(const RunSpec& spec);

// Strict: every key must be known and correctly typed; missing keys keep
// their defaults. Throws ConfigError.
RunSpec run_spec_from_json(const nlohmann::json& doc);
backbone::ModelConfig model_config_from_json(const nlohmann::json& doc);

// Applies "a.b.c=value" to `doc`. The value is parsed as JSON when possible
// and taken as a plain string otherwise. Throws ConfigError on a malformed
// assignment or when the path crosses a non-object.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Reads `path` (throws ConfigError naming the path when missing or not
// valid JSON). Precedence, highest first: overrides, the file, `env_seed`
// (used only when neither sets "seeds"), built-in defaults.
RunSpec load_run_spec(const std::filesystem::path& path, const std::vector<std::string>& overrides = {},
                      std::optional<std::uint64_t> env_seed = std::nullopt);

// Parses the RWF_SEED environment variable; nullopt when unset.
std::optional<std::uint64_t> seed_from_env();

}  // namespace rwf::config
