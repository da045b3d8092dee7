#include "rwf/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

namespace rwf::evaluation {

using backbone::Model;

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks), cells_(tasks * tasks) {}

std::size_t AccuracyMatrix::index(std::size_t i, std::size_t t) const {
    if (t >= tasks_ || i > t)
        throw std::out_of_range("AccuracyMatrix: cell (" + std::to_string(i) + ", " + std::to_string(t) +
                                ") outside the lower triangle of a " + std::to_string(tasks_) + "-task matrix");
    return t * tasks_ + i;
}

void AccuracyMatrix::set(std::size_t i, std::size_t t, double acc) {
    if (!(acc >= 0.0 && acc <= 1.0)) throw std::invalid_argument("AccuracyMatrix: accuracy must be in [0, 1]");
    cells_[index(i, t)] = acc;
}

bool AccuracyMatrix::has(std::size_t i, std::size_t t) const {
    return cells_[index(i, t)].has_value();
}

double AccuracyMatrix::at(std::size_t i, std::size_t t) const {
    const auto& c = cells_[index(i, t)];
    if (!c) throw std::logic_error("AccuracyMatrix: cell (" + std::to_string(i) + ", " + std::to_string(t) + ") not set");
    return *c;
}

bool AccuracyMatrix::column_complete(std::size_t t) const {
    for (std::size_t i = 0; i <= t; ++i)
        if (!has(i, t)) return false;
    return true;
}

bool AccuracyMatrix::complete() const {
    for (std::size_t t = 0; t < tasks_; ++t)
        if (!column_complete(t)) return false;
    return true;
}

double final_average_accuracy(const AccuracyMatrix& m) {
    const std::size_t T = m.num_tasks();
    if (T == 0 || !m.column_complete(T - 1)) throw std::invalid_argument("final_average_accuracy: last column incomplete");
    double sum = 0.0;
    for (std::size_t i = 0; i < T; ++i) sum += m.at(i, T - 1);
    return sum / static_cast<double>(T);
}

double forgetting(const AccuracyMatrix& m) {
    const std::size_t T = m.num_tasks();
    if (T < 2) throw std::invalid_argument("forgetting: needs at least two tasks");
    if (!m.complete()) throw std::invalid_argument("forgetting: accuracy matrix incomplete");
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < T; ++i) {
        double best = m.at(i, i);
        for (std::size_t t = i + 1; t < T; ++t) best = std::max(best, m.at(i, t));
        sum += best - m.at(i, T - 1);
    }
    return sum / static_cast<double>(T - 1);
}

double accuracy(const Model& model, const std::vector<stream::Sample>& samples, const ClassMask& mask) {
    if (samples.empty()) throw std::invalid_argument("accuracy: no samples");
    std::size_t correct = 0;
    for (const auto& s : samples) {
        const auto logits = backbone::model_logits(s.tokens, model);
        const std::size_t pred = masked_argmax<double>(logits, mask);
        if (!mask.allows(pred)) throw std::logic_error("accuracy: prediction on a masked-out class");
        if (pred == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

std::vector<double> evaluate_seen(const Model& model, const stream::TaskStream& stream, std::size_t t) {
    if (t >= stream.num_tasks()) throw std::out_of_range("evaluate_seen: no task " + std::to_string(t));
    ClassMask seen(stream.num_classes());
    for (std::size_t i = 0; i <= t; ++i)
        for (std::size_t c : stream.tasks()[i].classes) seen.allow(c);
    std::vector<double> acc;
    for (std::size_t i = 0; i <= t; ++i) acc.push_back(accuracy(model, stream.tasks()[i].test, seen));
    return acc;
}

const char* to_string(Method m) noexcept {
    switch (m) {
        case Method::RwF: return "rwf";
        case Method::Finetune: return "finetune";
        case Method::Joint: return "joint";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "rwf") return Method::RwF;
    if (s == "finetune") return Method::Finetune;
    if (s == "joint") return Method::Joint;
    throw ConfigError("unknown method '" + s + "' (expected rwf, finetune or joint)");
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("experiment config: " + msg); };
    stream.validate();
    resolved_model().validate();
    if (batch_size == 0) fail("batch_size must be > 0");
    if (seeds.empty()) fail("at least one seed is required");
    if (!(optimizer.lr >= 0.0)) fail("optimizer.lr must be >= 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) fail("optimizer.beta1 must be in [0, 1)");
    if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) fail("optimizer.beta2 must be in [0, 1)");
    if (!(optimizer.eps > 0.0)) fail("optimizer.eps must be > 0");
    if (model.backbone_mode == backbone::BackboneMode::PretrainThenFreeze) {
        if (pretrain.classes < 2) fail("pretrain.classes must be >= 2");
        if (pretrain.samples_per_class < 2) fail("pretrain.samples_per_class must be >= 2");
        if (!(pretrain.lr >= 0.0)) fail("pretrain.lr must be >= 0");
    }
}

backbone::ModelConfig ExperimentConfig::resolved_model() const {
    backbone::ModelConfig m = model;
    m.tokens = stream.tokens;
    m.input_dim = stream.input_dim;
    m.num_classes = stream.num_classes();
    if (method == Method::Finetune) m.routed_layers = 0;
    return m;
}

Stat summarize(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("summarize: no values");
    Stat s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

namespace {

// Salts for the per-seed random streams.
constexpr std::uint64_t kModelSalt = 0x30DE1;
constexpr std::uint64_t kPretrainDataSalt = 0xBA5E;
constexpr std::uint64_t kPretrainHeadSalt = 0xBA5F;
constexpr std::uint64_t kPretrainOrderSalt = 0xBA60;
constexpr std::uint64_t kIterationSalt = 0x17E4;
constexpr std::uint64_t kProbeSalt = 0x960BE;

std::vector<stream::Batch> epoch_batches(const std::vector<stream::Sample>& samples, std::size_t batch_size,
                                         RngStream& rng) {
    const auto order = rng_permutation(rng, samples.size());
    std::vector<stream::Batch> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        stream::Batch b;
        for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) b.push_back(samples[order[j]]);
        out.push_back(std::move(b));
    }
    return out;
}

bool is_backbone_param(const std::string& name) {
    return name.find(".router.") == std::string::npos && !name.starts_with("head.");
}

}  // namespace

void pretrain_backbone(Model& model, const ExperimentConfig& exp, std::uint64_t seed) {
    const RngStream root(seed);
    stream::StreamConfig base;
    base.tasks = 1;
    base.classes_per_task = exp.pretrain.classes;
    base.samples_per_class = exp.pretrain.samples_per_class;
    base.tokens = exp.stream.tokens;
    base.input_dim = exp.stream.input_dim;
    base.noise_std = exp.stream.noise_std;
    base.seed = root.fork(kPretrainDataSalt).next_u64();
    const stream::TaskStream base_stream = stream::make_synthetic_stream(base);
    const auto& train = base_stream.tasks()[0].train;

    Model pre = model;
    for (auto& b : pre.blocks) b.router.reset();
    pre.config.routed_layers = 0;
    pre.config.num_classes = base.num_classes();
    RngStream head_rng = root.fork(kPretrainHeadSalt);
    pre.head = rng_normal(head_rng, model.config.width, base.num_classes(), 0.02);
    pre.head_bias = Matrix(1, base.num_classes());
    pre.backbone_trainable = true;

    AdamConfig opt_cfg = exp.optimizer;
    opt_cfg.lr = exp.pretrain.lr;
    training::OptState opt = training::init_opt_state(pre, opt_cfg);
    const ClassMask all = ClassMask::all(base.num_classes());
    RngStream order = root.fork(kPretrainOrderSalt);
    for (std::size_t e = 0; e < exp.pretrain.epochs; ++e)
        for (const auto& batch : epoch_batches(train, exp.batch_size, order)) training::train_step(pre, batch, opt, all);

    std::map<std::string, const Matrix*> trained;
    for (const auto& p : backbone::parameters(std::as_const(pre))) trained[p.name] = p.value;
    for (auto& p : backbone::parameters(model)) {
        if (!is_backbone_param(p.name)) continue;
        *p.value = *trained.at(p.name);
    }
}

RngStream model_rng(std::uint64_t seed) {
    return RngStream(seed).fork(kModelSalt);
}

SeedRun run_seed(const ExperimentConfig& exp, std::uint64_t seed, Model* final_model, training::OptState* final_opt) {
    exp.validate();
    stream::StreamConfig sc = exp.stream;
    sc.seed = seed;
    stream::TaskStream stream = stream::make_synthetic_stream(sc);

    RngStream init_rng = model_rng(seed);
    Model model = backbone::build_model(exp.resolved_model(), init_rng);
    if (exp.model.backbone_mode == backbone::BackboneMode::PretrainThenFreeze) pretrain_backbone(model, exp, seed);
    // Finetune trains everything except the (absent) routers.
    if (exp.method == Method::Finetune) model.backbone_trainable = true;

    training::OptState opt = training::init_opt_state(model, exp.optimizer);
    const std::uint64_t iter_seed = RngStream(seed).fork(kIterationSalt).next_u64();
    const std::size_t T = stream.num_tasks();

    SeedRun run;
    run.seed = seed;
    run.acc = AccuracyMatrix(T);
    run.params = backbone::count_params(model);
    auto train_batches = [&](const std::vector<stream::Batch>& batches, const ClassMask& mask) {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& b : batches) {
            total += training::train_step(model, b, opt, mask) * static_cast<double>(b.size());
            n += b.size();
        }
        run.task_losses.push_back(n ? total / static_cast<double>(n) : 0.0);
    };

    if (exp.method == Method::Joint) {
        train_batches(stream.iterate_union_single_pass(exp.batch_size, iter_seed), ClassMask::all(stream.num_classes()));
        const auto acc = evaluate_seen(model, stream, T - 1);
        for (std::size_t i = 0; i < T; ++i) run.acc.set(i, T - 1, acc[i]);
    } else {
        for (std::size_t t = 0; t < T; ++t) {
            const ClassMask local = ClassMask::of(stream.num_classes(), stream.tasks()[t].classes);
            train_batches(stream.iterate_single_pass(t, exp.batch_size, iter_seed), local);
            const auto acc = evaluate_seen(model, stream, t);
            for (std::size_t i = 0; i <= t; ++i) run.acc.set(i, t, acc[i]);
        }
        if (T >= 2) run.forgetting = forgetting(run.acc);
    }
    run.a_final = final_average_accuracy(run.acc);
    run.samples_trained = static_cast<std::size_t>(opt.samples_seen);
    run.expected_samples = stream.total_train();
    if (run.samples_trained != run.expected_samples || stream.consumed() != run.expected_samples)
        throw AccountingError("single-pass accounting failed: trained on " + std::to_string(run.samples_trained) +
                              " samples, stream handed out " + std::to_string(stream.consumed()) + ", expected " +
                              std::to_string(run.expected_samples));
    if (final_model) *final_model = std::move(model);
    if (final_opt) *final_opt = std::move(opt);
    return run;
}

ExperimentReport run_experiment(const ExperimentConfig& exp) {
    exp.validate();
    const auto start = std::chrono::steady_clock::now();
    ExperimentReport report;
    report.config = exp;
    std::vector<double> finals, forgets;
    for (std::size_t i = 0; i < exp.seeds.size(); ++i) {
        const bool last = i + 1 == exp.seeds.size();
        Model model;
        training::OptState opt;
        SeedRun run = run_seed(exp, exp.seeds[i], last ? &model : nullptr, last ? &opt : nullptr);
        finals.push_back(run.a_final);
        if (run.forgetting) forgets.push_back(*run.forgetting);
        report.samples_trained += run.samples_trained;
        report.params = run.params;
        report.runs.push_back(std::move(run));
        if (last) {
            report.final_model = std::move(model);
            report.final_opt = std::move(opt);
        }
    }
    report.a_final = summarize(finals);
    if (!forgets.empty()) report.forgetting = summarize(forgets);
    report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

double linear_probe_accuracy(const stream::StreamConfig& stream_config, const backbone::ModelConfig& model_config,
                             std::uint64_t seed, const ProbeConfig& probe) {
    stream::StreamConfig sc = stream_config;
    sc.seed = seed;
    const stream::TaskStream stream = stream::make_synthetic_stream(sc);
    backbone::ModelConfig mc = model_config;
    mc.tokens = sc.tokens;
    mc.input_dim = sc.input_dim;
    mc.num_classes = sc.num_classes();
    mc.routed_layers = 0;
    mc.backbone_mode = backbone::BackboneMode::FrozenRandom;
    RngStream rng = RngStream(seed).fork(kProbeSalt);
    Model model = backbone::build_model(mc, rng);

    AdamConfig cfg;
    cfg.lr = probe.lr;
    training::OptState opt = training::init_opt_state(model, cfg);
    const auto& task = stream.tasks()[0];
    const ClassMask mask = ClassMask::of(sc.num_classes(), task.classes);
    for (std::size_t e = 0; e < probe.epochs; ++e)
        for (const auto& batch : epoch_batches(task.train, probe.batch_size, rng)) training::train_step(model, batch, opt, mask);
    return accuracy(model, task.test, mask);
}

}  // namespace rwf::evaluation
