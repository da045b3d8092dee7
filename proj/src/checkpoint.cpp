#include "rwf/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "rwf/config.hpp"
#include "rwf/numerics/binary_io.hpp"

namespace rwf::checkpoint {

using backbone::Model;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', 'W', 'F', 'C'};
constexpr char kAdamMagic[4] = {'A', 'D', 'A', 'M'};

using Reader = ByteReader<CheckpointError>;

void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

void put_matrix(std::string& out, const Matrix& m) {
    for (double v : m.data()) put_f32(out, static_cast<float>(v));
}

void put_named_shape(std::string& out, const std::string& name, const Matrix& m) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
}

std::string read_string(Reader& r, const char* what) {
    const std::uint32_t n = r.u32(what);
    return r.str(n, what);
}

json read_json(Reader& r, const char* what) {
    json j = json::parse(read_string(r, what), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw CheckpointError(std::string("checkpoint ") + what + " is not a JSON object");
    return j;
}

// Reads name and shape and checks them against what the model expects.
void expect_entry(Reader& r, const std::string& name, const Matrix& m) {
    const std::string got = read_string(r, "entry name");
    if (got != name) throw CheckpointError("checkpoint entry '" + got + "' where '" + name + "' was expected");
    const std::uint32_t rows = r.u32("rows"), cols = r.u32("cols");
    if (rows != m.rows() || cols != m.cols())
        throw CheckpointError("checkpoint entry '" + name + "' has shape " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", model expects " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()));
}

void read_matrix(Reader& r, Matrix& m, const std::string& name) {
    for (double& v : m.data()) {
        v = static_cast<double>(r.f32("values"));
        if (!std::isfinite(v)) throw CheckpointError("checkpoint entry '" + name + "' holds a non-finite value");
    }
}

}  // namespace

std::string encode(const Model& model, const training::OptState* opt) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    const json header = {
        {"model", config::to_json(model.config)},
        {"tokens", model.config.tokens},
        {"input_dim", model.config.input_dim},
        {"num_classes", model.config.num_classes},
        {"backbone_trainable", model.backbone_trainable},
    };
    put_string(out, header.dump());
    const auto params = backbone::parameters(model);
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_named_shape(out, p.name, *p.value);
        put_matrix(out, *p.value);
    }
    if (opt) {
        if (opt->names.size() != opt->moments.size()) throw std::logic_error("checkpoint: malformed optimizer state");
        out.append(kAdamMagic, 4);
        const json state = {
            {"step", opt->step},        {"samples_seen", opt->samples_seen}, {"lr", opt->config.lr},
            {"beta1", opt->config.beta1}, {"beta2", opt->config.beta2},      {"eps", opt->config.eps},
        };
        put_string(out, state.dump());
        put_u32(out, static_cast<std::uint32_t>(opt->names.size()));
        for (std::size_t i = 0; i < opt->names.size(); ++i) {
            const AdamMoments& m = opt->moments[i];
            put_named_shape(out, opt->names[i], m.first);
            put_matrix(out, m.first);
            put_matrix(out, m.second);
        }
    }
    return out;
}

Checkpoint decode(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError("bad magic: not an RWFC checkpoint");
    Reader r(bytes, "checkpoint");
    r.skip(4);
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

    const json header = read_json(r, "header");
    backbone::ModelConfig cfg;
    try {
        cfg = config::model_config_from_json(header.at("model"));
        cfg.tokens = header.at("tokens").get<std::size_t>();
        cfg.input_dim = header.at("input_dim").get<std::size_t>();
        cfg.num_classes = header.at("num_classes").get<std::size_t>();
        cfg.validate();
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint header: ") + e.what());
    }

    Checkpoint ck;
    RngStream unused(0);
    ck.model = backbone::build_model(cfg, unused);
    ck.model.backbone_trainable = header.value("backbone_trainable", false);
    auto params = backbone::parameters(ck.model);
    const std::uint32_t count = r.u32("parameter count");
    if (count != params.size())
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                              std::to_string(params.size()));
    for (auto& p : params) {
        expect_entry(r, p.name, *p.value);
        read_matrix(r, *p.value, p.name);
    }

    if (r.remaining() == 0) return ck;
    if (r.str(4, "section tag") != std::string(kAdamMagic, 4)) throw CheckpointError("unknown trailing section");
    const json state = read_json(r, "optimizer state");
    training::OptState opt;
    try {
        opt.step = state.at("step").get<std::uint64_t>();
        opt.samples_seen = state.at("samples_seen").get<std::uint64_t>();
        opt.config.lr = state.at("lr").get<double>();
        opt.config.beta1 = state.at("beta1").get<double>();
        opt.config.beta2 = state.at("beta2").get<double>();
        opt.config.eps = state.at("eps").get<double>();
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint optimizer state: ") + e.what());
    }
    const training::OptState fresh = training::init_opt_state(ck.model, opt.config);
    const std::uint32_t entries = r.u32("optimizer entry count");
    if (entries != fresh.names.size())
        throw CheckpointError("optimizer section holds " + std::to_string(entries) + " entries, model has " +
                              std::to_string(fresh.names.size()) + " trainable parameters");
    opt.names = fresh.names;
    opt.moments = fresh.moments;
    for (std::size_t i = 0; i < entries; ++i) {
        expect_entry(r, opt.names[i], opt.moments[i].first);
        read_matrix(r, opt.moments[i].first, opt.names[i]);
        read_matrix(r, opt.moments[i].second, opt.names[i]);
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes after optimizer section");
    ck.opt = std::move(opt);
    return ck;
}

void write(const std::filesystem::path& path, const Model& model, const training::OptState* opt) {
    const std::string bytes = encode(model, opt);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode(bytes);
}

}  // namespace rwf::checkpoint
