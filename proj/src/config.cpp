#include "rwf/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace rwf::config {

using nlohmann::json;
using evaluation::ExperimentConfig;

namespace {

const char* to_string(stream::ClassGeometry) noexcept { return "subspace_clusters"; }
using backbone::to_string;
using evaluation::to_string;

template <typename Enum>
Enum enum_from(const std::string& where, const std::string& s, std::initializer_list<Enum> values) {
    std::string known;
    for (Enum v : values) {
        if (s == to_string(v)) return v;
        known += (known.empty() ? "" : ", ") + std::string(to_string(v));
    }
    throw ConfigError(where + ": unknown value '" + s + "' (expected one of " + known + ")");
}

// Reads fields from one JSON object and rejects any key it was not asked for.
class StrictObject {
public:
    StrictObject(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(where() + " must be an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void read(const std::string& key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer() || v->get<long long>() < 0) fail(key, "a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void read(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) fail(key, "a number");
            out = v->get<double>();
        }
    }
    void read(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) fail(key, "a boolean");
            out = v->get<bool>();
        }
    }
    void read(const std::string& key, std::optional<double>& out) {
        if (const json* v = find(key)) {
            if (v->is_null())
                out.reset();
            else if (v->is_number())
                out = v->get<double>();
            else
                fail(key, "a number or null");
        }
    }
    void read(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) fail(key, "a string");
            out = v->get<std::string>();
        }
    }
    template <typename Enum>
    void read_enum(const std::string& key, Enum& out, std::initializer_list<Enum> values) {
        std::string s;
        read(key, s);
        if (find(key)) out = enum_from(where(key), s, values);
    }

    std::string where(const std::string& key = "") const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (const auto& [key, _] : obj_.items())
            if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }

private:
    [[noreturn]] void fail(const std::string& key, const char* expected) const {
        throw ConfigError(where(key) + " must be " + expected);
    }

    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_model(const json& doc, backbone::ModelConfig& m) {
    StrictObject o(doc, "model");
    o.read("depth", m.depth);
    o.read("width", m.width);
    o.read("heads", m.heads);
    o.read("mlp_ratio", m.mlp_ratio);
    o.read("prompts", m.prompts);
    o.read("routed_layers", m.routed_layers);
    o.read_enum("placement", m.placement, {backbone::Placement::First, backbone::Placement::Last});
    o.read("beta", m.beta);
    o.read_enum("backbone_mode", m.backbone_mode,
                {backbone::BackboneMode::FrozenRandom, backbone::BackboneMode::PretrainThenFreeze,
                 backbone::BackboneMode::JointlyTrainable});
    o.read_enum("pooling", m.pooling, {backbone::Pooling::ClassToken, backbone::Pooling::Mean});
    o.read("route_from_normalized", m.route_from_normalized);
    o.read("normalize_prompts", m.normalize_prompts);
    o.read("norm_eps", m.norm_eps);
    o.finish();
}

void read_stream(const json& doc, stream::StreamConfig& s) {
    StrictObject o(doc, "stream");
    o.read("tasks", s.tasks);
    o.read("classes_per_task", s.classes_per_task);
    o.read("samples_per_class", s.samples_per_class);
    o.read("few_shot_fraction", s.few_shot_fraction);
    o.read("tokens", s.tokens);
    o.read("input_dim", s.input_dim);
    o.read_enum("class_geometry", s.class_geometry, {stream::ClassGeometry::SubspaceClusters});
    o.read("noise_std", s.noise_std);
    o.finish();
}

void read_optimizer(const json& doc, AdamConfig& a) {
    StrictObject o(doc, "optimizer");
    o.read("lr", a.lr);
    o.read("beta1", a.beta1);
    o.read("beta2", a.beta2);
    o.read("eps", a.eps);
    o.finish();
}

void read_pretrain(const json& doc, evaluation::PretrainConfig& p) {
    StrictObject o(doc, "pretrain");
    o.read("classes", p.classes);
    o.read("samples_per_class", p.samples_per_class);
    o.read("epochs", p.epochs);
    o.read("lr", p.lr);
    o.finish();
}

}  // namespace

json to_json(const backbone::ModelConfig& m) {
    return {
        {"depth", m.depth},
        {"width", m.width},
        {"heads", m.heads},
        {"mlp_ratio", m.mlp_ratio},
        {"prompts", m.prompts},
        {"routed_layers", m.routed_layers},
        {"placement", to_string(m.placement)},
        {"beta", m.beta ? json(*m.beta) : json(nullptr)},
        {"backbone_mode", to_string(m.backbone_mode)},
        {"pooling", to_string(m.pooling)},
        {"route_from_normalized", m.route_from_normalized},
        {"normalize_prompts", m.normalize_prompts},
        {"norm_eps", m.norm_eps},
    };
}

json to_json(const stream::StreamConfig& s) {
    return {
        {"tasks", s.tasks},
        {"classes_per_task", s.classes_per_task},
        {"samples_per_class", s.samples_per_class},
        {"few_shot_fraction", s.few_shot_fraction},
        {"tokens", s.tokens},
        {"input_dim", s.input_dim},
        {"class_geometry", to_string(s.class_geometry)},
        {"noise_std", s.noise_std},
    };
}

json to_json(const ExperimentConfig& e) {
    return {
        {"version", kConfigVersion},
        {"method", to_string(e.method)},
        {"seeds", e.seeds},
        {"batch_size", e.batch_size},
        {"model", to_json(e.model)},
        {"stream", to_json(e.stream)},
        {"optimizer",
         {{"lr", e.optimizer.lr}, {"beta1", e.optimizer.beta1}, {"beta2", e.optimizer.beta2}, {"eps", e.optimizer.eps}}},
        {"pretrain",
         {{"classes", e.pretrain.classes},
          {"samples_per_class", e.pretrain.samples_per_class},
          {"epochs", e.pretrain.epochs},
          {"lr", e.pretrain.lr}}},
    };
}

json to_json(const RunSpec& spec) {
    json doc = to_json(spec.experiment);
    doc["out_dir"] = spec.out_dir;
    return doc;
}

backbone::ModelConfig model_config_from_json(const json& doc) {
    backbone::ModelConfig m;
    read_model(doc, m);
    return m;
}

RunSpec run_spec_from_json(const json& doc) {
    RunSpec spec;
    ExperimentConfig& e = spec.experiment;
    StrictObject o(doc, "");
    if (const json* v = o.find("version"); v && (!v->is_number_integer() || v->get<long long>() != kConfigVersion))
        throw ConfigError("config version must be " + std::to_string(kConfigVersion));
    o.read_enum("method", e.method, {evaluation::Method::RwF, evaluation::Method::Finetune, evaluation::Method::Joint});
    if (const json* v = o.find("seeds")) {
        if (!v->is_array()) throw ConfigError("seeds must be an array of non-negative integers");
        e.seeds.clear();
        for (const auto& s : *v) {
            if (!s.is_number_integer() || s.get<long long>() < 0)
                throw ConfigError("seeds must be an array of non-negative integers");
            e.seeds.push_back(s.get<std::uint64_t>());
        }
    }
    o.read("batch_size", e.batch_size);
    o.read("out_dir", spec.out_dir);
    if (const json* v = o.find("model")) read_model(*v, e.model);
    if (const json* v = o.find("stream")) read_stream(*v, e.stream);
    if (const json* v = o.find("optimizer")) read_optimizer(*v, e.optimizer);
    if (const json* v = o.find("pretrain")) read_pretrain(*v, e.pretrain);
    o.finish();
    e.validate();
    return spec;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* node = &doc;
    std::stringstream parts(path);
    std::string key, next;
    std::getline(parts, key, '.');
    while (std::getline(parts, next, '.')) {
        if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
        if (!node->is_object()) throw ConfigError("override '" + path + "' descends into a non-object");
        json& child = (*node)[key];
        if (child.is_null()) child = json::object();
        node = &child;
        key = next;
    }
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
    if (!node->is_object()) throw ConfigError("override '" + path + "' descends into a non-object");
    (*node)[key] = std::move(value);
}

RunSpec load_run_spec(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> env_seed) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
    if (!doc.is_object()) throw ConfigError("config file '" + path.string() + "' must hold a JSON object");
    if (env_seed && !doc.contains("seeds")) doc["seeds"] = json::array({*env_seed});
    for (const auto& o : overrides) apply_override(doc, o);
    return run_spec_from_json(doc);
}

std::optional<std::uint64_t> seed_from_env() {
    const char* v = std::getenv("RWF_SEED");
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    const unsigned long long s = std::strtoull(v, &end, 10);
    if (*end != '\0' || v[0] == '-') throw ConfigError("RWF_SEED must be a non-negative integer, got '" + std::string(v) + "'");
    return s;
}

}  // namespace rwf::config
