#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "rwf/checkpoint.hpp"
#include "rwf/config.hpp"
#include "rwf/report.hpp"

using namespace rwf;
using nlohmann::json;

namespace {

evaluation::ExperimentConfig tiny_experiment() {
    evaluation::ExperimentConfig e;
    e.stream.tasks = 2;
    e.stream.classes_per_task = 2;
    e.stream.samples_per_class = 10;
    e.stream.tokens = 3;
    e.stream.input_dim = 4;
    e.model.depth = 2;
    e.model.width = 8;
    e.model.heads = 2;
    e.model.prompts = 2;
    e.model.routed_layers = 1;
    e.model.backbone_mode = backbone::BackboneMode::FrozenRandom;
    e.batch_size = 4;
    e.seeds = {3};
    return e;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("rwf_test_io_" + name);
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream(p) << s;
}

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

TEST(Config, DefaultsRoundTripThroughJson) {
    config::RunSpec spec;
    spec.experiment = tiny_experiment();
    spec.experiment.model.beta = 0.7;
    spec.out_dir = "somewhere";
    const json doc = config::to_json(spec);
    const auto back = config::run_spec_from_json(doc);
    EXPECT_EQ(config::to_json(back), doc);
    EXPECT_EQ(back.out_dir, "somewhere");
    EXPECT_EQ(*back.experiment.model.beta, 0.7);
}

TEST(Config, EmptyObjectGivesDefaults) {
    const auto spec = config::run_spec_from_json(json::object());
    EXPECT_EQ(config::to_json(spec), config::to_json(config::RunSpec{}));
}

TEST(Config, UnknownKeysAreRejectedWithTheirPath) {
    for (const char* text : {R"({"methd": "rwf"})", R"({"model": {"depht": 3}})", R"({"stream": {"seed": 3}})",
                             R"({"optimizer": {"momentum": 0.9}})", R"({"pretrain": {"classes": 4, "x": 1}})"}) {
        try {
            config::run_spec_from_json(json::parse(text));
            ADD_FAILURE() << text;
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find("unknown config key"), std::string::npos) << e.what();
        }
    }
    try {
        config::run_spec_from_json(json::parse(R"({"model": {"depht": 3}})"));
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("model.depht"), std::string::npos);
    }
}

TEST(Config, WrongTypesAndValuesAreRejected) {
    for (const char* text :
         {R"({"batch_size": -1})", R"({"batch_size": 1.5})", R"({"model": {"placement": "middle"}})",
          R"({"method": "l2p"})", R"({"seeds": 3})", R"({"seeds": [-1]})", R"({"model": {"normalize_prompts": 1}})",
          R"({"model": {"routed_layers": 9}})", R"({"version": 2})", R"({"model": []})", R"({"stream": {"noise_std": "x"}})"}) {
        EXPECT_THROW(config::run_spec_from_json(json::parse(text)), ConfigError) << text;
    }
}

TEST(Config, DottedOverrides) {
    json doc = json::object();
    config::apply_override(doc, "model.routed_layers=2");
    config::apply_override(doc, "seeds=[1,2,3]");
    config::apply_override(doc, "method=finetune");
    config::apply_override(doc, "model.placement=\"last\"");
    config::apply_override(doc, "optimizer.lr=0.5");
    const auto spec = config::run_spec_from_json(doc);
    EXPECT_EQ(spec.experiment.model.routed_layers, 2u);
    EXPECT_EQ(spec.experiment.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(spec.experiment.method, evaluation::Method::Finetune);
    EXPECT_EQ(spec.experiment.model.placement, backbone::Placement::Last);
    EXPECT_EQ(spec.experiment.optimizer.lr, 0.5);
    EXPECT_THROW(config::apply_override(doc, "noequals"), ConfigError);
    EXPECT_THROW(config::apply_override(doc, "=3"), ConfigError);
    EXPECT_THROW(config::apply_override(doc, "model..depth=3"), ConfigError);
    config::apply_override(doc, "batch_size=4");
    EXPECT_THROW(config::apply_override(doc, "batch_size.x=3"), ConfigError);
    config::apply_override(doc, "model.typo=3");
    EXPECT_THROW(config::run_spec_from_json(doc), ConfigError);
}

TEST(Config, SeedPrecedence) {
    const auto path = temp_file("seeds.json");
    write_text(path, R"({"batch_size": 8})");
    EXPECT_EQ(config::load_run_spec(path).experiment.seeds, (std::vector<std::uint64_t>{0}));
    EXPECT_EQ(config::load_run_spec(path, {}, 9).experiment.seeds, (std::vector<std::uint64_t>{9}));
    EXPECT_EQ(config::load_run_spec(path, {"seeds=[4]"}, 9).experiment.seeds, (std::vector<std::uint64_t>{4}));
    write_text(path, R"({"seeds": [5, 6]})");
    EXPECT_EQ(config::load_run_spec(path, {}, 9).experiment.seeds, (std::vector<std::uint64_t>{5, 6}));
    EXPECT_EQ(config::load_run_spec(path, {"seeds=[7]"}, 9).experiment.seeds, (std::vector<std::uint64_t>{7}));
    std::filesystem::remove(path);
}

TEST(Config, MissingOrMalformedFileNamesThePath) {
    const auto missing = temp_file("does_not_exist.json");
    try {
        config::load_run_spec(missing);
        ADD_FAILURE();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find(missing.string()), std::string::npos);
    }
    const auto bad = temp_file("bad.json");
    write_text(bad, "{ not json");
    EXPECT_THROW(config::load_run_spec(bad), ConfigError);
    std::filesystem::remove(bad);
}

TEST(Config, BundledDefaultParses) {
    const auto spec = config::load_run_spec(RWF_DEFAULT_CONFIG);
    const auto& e = spec.experiment;
    EXPECT_EQ(e.stream.tasks, 5u);
    EXPECT_EQ(e.stream.classes_per_task, 4u);
    EXPECT_EQ(e.stream.samples_per_class, 100u);
    EXPECT_EQ(e.stream.noise_std, 0.3);
    EXPECT_EQ(e.seeds.size(), 3u);
    EXPECT_EQ(e.model.prompts, 30u);
}

TEST(Checkpoint, RoundTripStoresFloat32Values) {
    const auto e = tiny_experiment();
    RngStream rng(1);
    const auto model = backbone::build_model(e.resolved_model(), rng);
    const auto ck = checkpoint::decode(checkpoint::encode(model));
    EXPECT_FALSE(ck.opt.has_value());
    const auto a = backbone::parameters(model), b = backbone::parameters(std::as_const(ck.model));
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].name, b[i].name);
        EXPECT_EQ(a[i].trainable, b[i].trainable);
        for (std::size_t j = 0; j < a[i].value->size(); ++j)
            ASSERT_EQ(f32(a[i].value->data()[j]), b[i].value->data()[j]) << a[i].name;
    }
    EXPECT_EQ(checkpoint::encode(ck.model), checkpoint::encode(model));
}

TEST(Checkpoint, LayoutOfTheHeader) {
    const auto e = tiny_experiment();
    RngStream rng(2);
    const auto model = backbone::build_model(e.resolved_model(), rng);
    const std::string bytes = checkpoint::encode(model);
    EXPECT_EQ(bytes.substr(0, 4), "RWFC");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), checkpoint::kVersion);
    std::uint32_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, 4);
    const json header = json::parse(bytes.substr(12, header_len));
    EXPECT_EQ(header["num_classes"], 4);
    EXPECT_EQ(header["model"]["routed_layers"], 1);
    // magic, version, header, count, then per entry: name, shape, f32 values
    std::size_t expected = 12 + header_len + 4;
    for (const auto& p : backbone::parameters(model)) expected += 4 + p.name.size() + 8 + 4 * p.value->size();
    EXPECT_EQ(bytes.size(), expected);
}

TEST(Checkpoint, OptimizerSectionRoundTrips) {
    auto e = tiny_experiment();
    const auto report = evaluation::run_experiment(e);
    const auto& opt = *report.final_opt;
    const auto ck = checkpoint::decode(checkpoint::encode(*report.final_model, &opt));
    ASSERT_TRUE(ck.opt.has_value());
    EXPECT_EQ(ck.opt->step, opt.step);
    EXPECT_EQ(ck.opt->samples_seen, opt.samples_seen);
    EXPECT_EQ(ck.opt->config.lr, opt.config.lr);
    EXPECT_EQ(ck.opt->names, opt.names);
    for (std::size_t i = 0; i < opt.moments.size(); ++i)
        for (std::size_t j = 0; j < opt.moments[i].first.size(); ++j) {
            EXPECT_EQ(ck.opt->moments[i].first.data()[j], f32(opt.moments[i].first.data()[j]));
            EXPECT_EQ(ck.opt->moments[i].second.data()[j], f32(opt.moments[i].second.data()[j]));
        }
}

TEST(Checkpoint, SameSeedGivesIdenticalBytes) {
    const auto e = tiny_experiment();
    const auto a = evaluation::run_experiment(e), b = evaluation::run_experiment(e);
    EXPECT_EQ(checkpoint::encode(*a.final_model, &*a.final_opt), checkpoint::encode(*b.final_model, &*b.final_opt));
    auto other = e;
    other.seeds = {4};
    const auto c = evaluation::run_experiment(other);
    EXPECT_NE(checkpoint::encode(*a.final_model), checkpoint::encode(*c.final_model));
}

TEST(Checkpoint, CorruptionIsDetected) {
    const auto e = tiny_experiment();
    RngStream rng(3);
    const auto model = backbone::build_model(e.resolved_model(), rng);
    const training::OptState opt = training::init_opt_state(model, AdamConfig{});
    const std::string good = checkpoint::encode(model, &opt);
    EXPECT_THROW(checkpoint::decode(""), checkpoint::CheckpointError);
    EXPECT_THROW(checkpoint::decode("RWFD" + good.substr(4)), checkpoint::CheckpointError);
    for (std::size_t cut : {std::size_t{6}, std::size_t{20}, good.size() / 2, good.size() - 1})
        EXPECT_THROW(checkpoint::decode(good.substr(0, cut)), checkpoint::CheckpointError) << cut;
    EXPECT_THROW(checkpoint::decode(good + "x"), checkpoint::CheckpointError);
    std::string bad_version = good;
    bad_version[4] = 9;
    EXPECT_THROW(checkpoint::decode(bad_version), checkpoint::CheckpointError);
    // NaN in the first parameter value
    std::uint32_t header_len = 0;
    std::memcpy(&header_len, good.data() + 8, 4);
    const std::size_t first_value = 12 + header_len + 4 + 4 + std::string("embed").size() + 8;
    std::string nan = good;
    const float q = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan.data() + first_value, &q, 4);
    EXPECT_THROW(checkpoint::decode(nan), checkpoint::CheckpointError);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto e = tiny_experiment();
    RngStream rng(4);
    const auto model = backbone::build_model(e.resolved_model(), rng);
    const auto path = temp_file("model.bin");
    checkpoint::write(path, model);
    EXPECT_EQ(checkpoint::encode(checkpoint::read(path).model), checkpoint::encode(model));
    std::filesystem::remove(path);
    EXPECT_THROW(checkpoint::read(path), std::runtime_error);
}

TEST(Report, JsonIsValidAndComplete) {
    for (auto method : {evaluation::Method::RwF, evaluation::Method::Joint}) {
        auto e = tiny_experiment();
        e.method = method;
        e.seeds = {1, 2};
        const auto r = evaluation::run_experiment(e);
        const json doc = report::to_json(r);
        EXPECT_NO_THROW(report::validate_report_json(doc));
        EXPECT_EQ(doc["runs"].size(), 2u);
        EXPECT_EQ(doc["forgetting"].is_null(), method == evaluation::Method::Joint);
        EXPECT_TRUE(doc["runs"][0]["accuracy_matrix"][1][0].is_null());
        json broken = doc;
        broken["runs"][0].erase("a_final");
        EXPECT_THROW(report::validate_report_json(broken), std::invalid_argument);
        broken = doc;
        broken["config"]["model"]["bogus"] = 1;
        EXPECT_THROW(report::validate_report_json(broken), ConfigError);
    }
}

TEST(Report, RerunsDifferOnlyInMetadata) {
    const auto e = tiny_experiment();
    json a = report::to_json(evaluation::run_experiment(e)), b = report::to_json(evaluation::run_experiment(e));
    a.erase("metadata");
    b.erase("metadata");
    EXPECT_EQ(a.dump(), b.dump());
}

TEST(Report, SummaryCsvHasOneRowPerSeed) {
    auto e = tiny_experiment();
    e.seeds = {1, 2, 3};
    const auto r = evaluation::run_experiment(e);
    const std::string csv = report::summary_csv(r);
    EXPECT_EQ(report::validate_csv(csv, report::kSummaryHeader), 3u);
    EXPECT_NE(csv.find("\nrwf,1,first,2,1,2,"), std::string::npos) << csv;
    const std::string sweep = std::string(report::kSweepHeader) + "\n" + report::sweep_rows("k", "1", r);
    EXPECT_EQ(report::validate_csv(sweep, report::kSweepHeader), 3u);
    EXPECT_THROW(report::validate_csv("a,b\n1,2\n", report::kSummaryHeader), std::invalid_argument);
    EXPECT_THROW(report::validate_csv(std::string(report::kSummaryHeader) + "\n1,2\n", report::kSummaryHeader),
                 std::invalid_argument);
}
