#include <gtest/gtest.h>

#include <cstring>
#include <vector>

#include "rwf/training.hpp"

using namespace rwf;
using namespace rwf::backbone;
using namespace rwf::training;

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.depth = 2;
    c.width = 8;
    c.heads = 2;
    c.tokens = 6;
    c.input_dim = 5;
    c.prompts = 2;
    c.routed_layers = 1;
    c.num_classes = 4;
    c.backbone_mode = BackboneMode::FrozenRandom;
    return c;
}

std::vector<stream::Sample> random_batch(RngStream& rng, const ModelConfig& c, std::size_t n) {
    std::vector<stream::Sample> batch(n);
    for (auto& s : batch) {
        s.tokens = rng_normal(rng, c.tokens, c.input_dim, 1.0);
        s.label = rng.uniform_index(c.num_classes);
    }
    return batch;
}

std::vector<Matrix> snapshot(const Model& m) {
    std::vector<Matrix> out;
    for (const auto& p : parameters(m)) out.push_back(*p.value);
    return out;
}

bool bytes_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(GradCheck, ToyConfigAcrossSeeds) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RngStream rng(seed);
        const auto report = grad_check(toy_config(), rng, 1e-4);
        for (const auto& g : report.groups) EXPECT_LT(g.max_rel_err, 1e-4) << "seed " << seed << " " << g.name;
        EXPECT_TRUE(report.pass);
        EXPECT_EQ(report.groups.size(), 4u);
    }
}

TEST(GradCheck, EveryParameterIncludingFrozen) {
    RngStream rng(6);
    GradCheckOptions opts;
    opts.include_frozen = true;
    const auto report = grad_check(toy_config(), rng, 1e-4, opts);
    EXPECT_EQ(report.groups.size(), parameters(build_model(toy_config(), rng)).size());
    for (const auto& g : report.groups) EXPECT_LT(g.max_rel_err, 1e-4) << g.name;
}

TEST(GradCheck, ArchitectureVariants) {
    struct Variant {
        const char* label;
        void (*apply)(ModelConfig&);
    };
    const Variant variants[] = {
        {"last placement", [](ModelConfig& c) { c.placement = Placement::Last; }},
        {"both blocks routed", [](ModelConfig& c) { c.routed_layers = 2; }},
        {"mean pooling", [](ModelConfig& c) { c.pooling = Pooling::Mean; }},
        {"route from normalized", [](ModelConfig& c) { c.route_from_normalized = true; }},
        {"raw prompts", [](ModelConfig& c) { c.normalize_prompts = false; }},
        {"jointly trainable", [](ModelConfig& c) { c.backbone_mode = BackboneMode::JointlyTrainable; }},
        {"single head, three prompts", [](ModelConfig& c) { c.heads = 1; c.prompts = 3; }},
    };
    for (const auto& v : variants) {
        ModelConfig c = toy_config();
        v.apply(c);
        RngStream rng(7);
        GradCheckOptions opts;
        opts.include_frozen = true;
        const auto report = grad_check(c, rng, 1e-4, opts);
        for (const auto& g : report.groups) EXPECT_LT(g.max_rel_err, 1e-4) << v.label << ": " << g.name;
    }
}

TEST(GradCheck, LinearHeadOnlyModel) {
    ModelConfig c = toy_config();
    c.depth = 0;
    c.routed_layers = 0;
    RngStream rng(8);
    const auto report = grad_check(c, rng, 1e-8);
    EXPECT_TRUE(report.pass);
    EXPECT_LT(report.worst(), 1e-8);
}

TEST(GradCheck, FlagsExactlyTheCorruptedGroup) {
    RngStream rng(9);
    GradCheckOptions opts;
    opts.corrupt = [](Model& g) {
        for (double& v : g.blocks[0].router->query_proj.data()) v = -v;
    };
    const auto report = grad_check(toy_config(), rng, 1e-4, opts);
    EXPECT_FALSE(report.pass);
    for (const auto& g : report.groups) EXPECT_EQ(g.pass, g.name != "blocks.0.router.query_proj") << g.name;
}

TEST(Backward, ZeroLearningRateLeavesLossUnchanged) {
    const ModelConfig c = toy_config();
    RngStream rng(10);
    Model m = build_model(c, rng);
    const auto batch = random_batch(rng, c, 4);
    const ClassMask mask = ClassMask::all(c.num_classes);
    AdamConfig cfg;
    cfg.lr = 0.0;
    OptState opt = init_opt_state(m, cfg);
    const double first = train_step(m, batch, opt, mask);
    const double second = train_step(m, batch, opt, mask);
    EXPECT_EQ(first, second);
    EXPECT_EQ(opt.step, 2u);
    EXPECT_EQ(opt.samples_seen, 8u);
}

TEST(Backward, RepeatedSampleBatchEqualsSingleSample) {
    const ModelConfig c = toy_config();
    RngStream rng(11);
    const Model m = build_model(c, rng);
    const auto one = random_batch(rng, c, 1);
    const std::vector<stream::Sample> many(5, one[0]);
    const ClassMask mask = ClassMask::all(c.num_classes);
    const auto a = backward(m, one, mask), b = backward(m, many, mask);
    EXPECT_NEAR(a.loss, b.loss, 1e-14);
    const auto pa = parameters(a.grads), pb = parameters(b.grads);
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_LT(max_abs_diff(*pa[i].value, *pb[i].value), 1e-13) << pa[i].name;
}

TEST(Backward, EmptyBatchThrows) {
    const ModelConfig c = toy_config();
    RngStream rng(12);
    const Model m = build_model(c, rng);
    EXPECT_THROW(backward(m, std::vector<stream::Sample>{}, ClassMask::all(c.num_classes)), std::invalid_argument);
}

TEST(TrainStep, FrozenParametersKeepTheirBytes) {
    ModelConfig c = toy_config();
    c.routed_layers = 2;
    RngStream rng(13);
    Model m = build_model(c, rng);
    const auto before = snapshot(m);
    OptState opt = init_opt_state(m, AdamConfig{});
    const ClassMask mask = ClassMask::all(c.num_classes);
    for (int step = 0; step < 100; ++step) train_step(m, random_batch(rng, c, 4), opt, mask);
    const auto params = parameters(m);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].trainable)
            EXPECT_FALSE(bytes_equal(*params[i].value, before[i])) << params[i].name;
        else
            EXPECT_TRUE(bytes_equal(*params[i].value, before[i])) << params[i].name;
    }
}

TEST(TrainStep, RepeatedBatchLossMostlyDecreases) {
    ModelConfig c = toy_config();
    c.backbone_mode = BackboneMode::JointlyTrainable;
    RngStream rng(14);
    Model m = build_model(c, rng);
    const auto batch = random_batch(rng, c, 8);
    const ClassMask mask = ClassMask::all(c.num_classes);
    OptState opt = init_opt_state(m, AdamConfig{});
    double prev = batch_loss(m, batch, mask);
    const double start = prev;
    int violations = 0;
    for (int step = 0; step < 50; ++step) {
        train_step(m, batch, opt, mask);
        const double now = batch_loss(m, batch, mask);
        if (now > prev) ++violations;
        prev = now;
    }
    EXPECT_LE(violations, 5);
    EXPECT_LT(prev, start);
}

TEST(TrainStep, LossTrajectoryIsDeterministic) {
    auto run = [] {
        const ModelConfig c = toy_config();
        RngStream rng(15);
        Model m = build_model(c, rng);
        OptState opt = init_opt_state(m, AdamConfig{});
        std::vector<double> losses;
        for (int step = 0; step < 20; ++step)
            losses.push_back(train_step(m, random_batch(rng, c, 4), opt, ClassMask::all(c.num_classes)));
        return losses;
    };
    EXPECT_EQ(run(), run());
}

TEST(TrainStep, MisalignedOptimizerStateThrows) {
    ModelConfig c = toy_config();
    RngStream rng(16);
    Model m = build_model(c, rng);
    c.routed_layers = 2;
    Model other = build_model(c, rng);
    OptState opt = init_opt_state(other, AdamConfig{});
    EXPECT_THROW(train_step(m, random_batch(rng, toy_config(), 2), opt, ClassMask::all(4)), std::logic_error);
}

TEST(TrainStep, MaskRestrictsGradientToAllowedClasses) {
    const ModelConfig c = toy_config();
    RngStream rng(17);
    const Model m = build_model(c, rng);
    auto batch = random_batch(rng, c, 6);
    for (auto& s : batch) s.label = s.label % 2;
    const auto r = backward(m, batch, ClassMask::of(c.num_classes, std::vector<int>{0, 1}));
    for (std::size_t j = 0; j < c.width; ++j) {
        EXPECT_EQ(r.grads.head(j, 2), 0.0);
        EXPECT_EQ(r.grads.head(j, 3), 0.0);
    }
    EXPECT_EQ(r.grads.head_bias(0, 2), 0.0);
}

TEST(Backward, TrainableScopeMatchesFullScopeOnTrainableParams) {
    for (auto placement : {Placement::First, Placement::Last}) {
        ModelConfig c = toy_config();
        c.depth = 3;
        c.placement = placement;
        RngStream rng(18);
        const Model m = build_model(c, rng);
        const auto batch = random_batch(rng, c, 3);
        const ClassMask mask = ClassMask::all(c.num_classes);
        const auto full = backward(m, batch, mask);
        const auto narrow = backward(m, batch, mask, trainable_scope(m));
        EXPECT_EQ(full.loss, narrow.loss);
        const auto pf = parameters(full.grads), pn = parameters(narrow.grads);
        for (std::size_t i = 0; i < pf.size(); ++i) {
            if (pf[i].trainable)
                EXPECT_LT(max_abs_diff(*pf[i].value, *pn[i].value), 1e-14) << pf[i].name;
            else
                EXPECT_EQ(frobenius_norm(*pn[i].value), 0.0) << pn[i].name;
        }
    }
}
