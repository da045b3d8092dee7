#include "rwf/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rwf/numerics/finite_diff.hpp"

namespace rwf::training {

using backbone::Model;

OptState init_opt_state(const Model& model, const AdamConfig& config) {
    OptState s;
    s.config = config;
    for (const auto& p : backbone::parameters(model)) {
        if (!p.trainable) continue;
        s.names.push_back(p.name);
        s.moments.push_back(AdamMoments::zeros_like(*p.value));
    }
    return s;
}

namespace {

std::vector<std::size_t> labels_of(std::span<const stream::Sample> batch) {
    std::vector<std::size_t> labels;
    labels.reserve(batch.size());
    for (const auto& s : batch) labels.push_back(s.label);
    return labels;
}

}  // namespace

backbone::GradScope trainable_scope(const Model& model) {
    return {model.backbone_trainable, false};
}

BackwardResult backward(const Model& model, std::span<const stream::Sample> batch, const ClassMask& mask,
                        backbone::GradScope scope) {
    if (batch.empty()) throw std::invalid_argument("backward: empty batch");
    const std::size_t C = model.config.num_classes;
    std::vector<backbone::ForwardTrace> traces(batch.size());
    Matrix logits(batch.size(), C);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto l = backbone::model_logits(batch[i].tokens, model, &traces[i]);
        std::copy(l.begin(), l.end(), logits.row(i).begin());
    }
    Matrix grad_logits;
    const auto labels = labels_of(batch);
    BackwardResult r;
    r.loss = cross_entropy(logits, std::span<const std::size_t>(labels), mask, &grad_logits);
    r.grads = backbone::zeros_like(model);
    // Sequential accumulation keeps the summation order fixed.
    for (std::size_t i = 0; i < batch.size(); ++i)
        backbone::model_backward(traces[i], model, grad_logits.row(i), r.grads, scope);
    for (const auto& p : backbone::parameters(std::as_const(r.grads)))
        if (!p.value->all_finite()) throw NumericError("backward: non-finite gradient in " + p.name);
    return r;
}

double batch_loss(const Model& model, std::span<const stream::Sample> batch, const ClassMask& mask) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    Matrix logits(batch.size(), model.config.num_classes);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto l = backbone::model_logits(batch[i].tokens, model);
        std::copy(l.begin(), l.end(), logits.row(i).begin());
    }
    const auto labels = labels_of(batch);
    return cross_entropy(logits, std::span<const std::size_t>(labels), mask);
}

double train_step(Model& model, std::span<const stream::Sample> batch, OptState& opt, const ClassMask& mask) {
    BackwardResult r = backward(model, batch, mask, trainable_scope(model));
    ++opt.step;
    auto params = backbone::parameters(model);
    auto grads = backbone::parameters(r.grads);
    std::size_t slot = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        if (slot >= opt.names.size() || opt.names[slot] != params[i].name)
            throw std::logic_error("train_step: optimizer state does not match parameter " + params[i].name);
        adam_step(*params[i].value, *grads[i].value, opt.moments[slot], opt.step, opt.config);
        ++slot;
    }
    if (slot != opt.names.size()) throw std::logic_error("train_step: optimizer state has extra entries");
    opt.samples_seen += batch.size();
    return r.loss;
}

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& g : groups) w = std::max(w, g.max_rel_err);
    return w;
}

GradCheckReport grad_check(const backbone::ModelConfig& config, RngStream& rng, double tol,
                           const GradCheckOptions& options) {
    RngStream model_rng = rng.fork(1);
    Model model = backbone::build_model(config, model_rng);
    // Move every parameter off its initial value so no gradient is
    // structurally tiny (zero biases, unit gains, near-zero queries).
    RngStream jitter = rng.fork(2);
    for (auto& p : backbone::parameters(model))
        for (double& v : p.value->data()) v += 0.1 * jitter.normal();

    RngStream data_rng = rng.fork(3);
    std::vector<stream::Sample> batch(options.batch_size);
    for (auto& s : batch) {
        s.tokens = rng_normal(data_rng, config.tokens, config.input_dim, 1.0);
        s.label = static_cast<std::size_t>(data_rng.uniform_index(config.num_classes));
    }
    const ClassMask mask = ClassMask::all(config.num_classes);

    BackwardResult analytic = backward(model, batch, mask);
    if (options.corrupt) options.corrupt(analytic.grads);

    GradCheckReport report;
    report.pass = true;
    auto params = backbone::parameters(model);
    auto grads = backbone::parameters(std::as_const(analytic.grads));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable && !options.include_frozen) continue;
        Matrix& target = *params[i].value;
        const std::vector<double> x0(target.data().begin(), target.data().end());
        auto f = [&](std::span<const double> x) {
            std::copy(x.begin(), x.end(), target.data().begin());
            return batch_loss(model, batch, mask);
        };
        const auto numeric = finite_diff_grad(f, x0, options.fd_eps);
        std::copy(x0.begin(), x0.end(), target.data().begin());

        GroupCheck g;
        g.name = params[i].name;
        g.coordinates = x0.size();
        const auto a = grads[i].value->data();
        for (std::size_t j = 0; j < numeric.size(); ++j) {
            const double err = std::abs(a[j] - numeric[j]) / (std::abs(a[j]) + std::abs(numeric[j]) + 1e-12);
            g.max_rel_err = std::max(g.max_rel_err, err);
        }
        g.pass = g.max_rel_err < tol;
        report.pass = report.pass && g.pass;
        report.groups.push_back(std::move(g));
    }
    return report;
}

}  // namespace rwf::training
