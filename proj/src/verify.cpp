#include "rwf/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "rwf/routing.hpp"
#include "rwf/training.hpp"

namespace rwf::verify {

using backbone::BlockParams;
using backbone::Model;
using backbone::ModelConfig;

namespace {

std::string sci(double v) {
    std::ostringstream os;
    os << std::setprecision(3) << std::scientific << v;
    return os.str();
}

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<double> softmax_row(std::span<const double> s, double beta) {
    const Matrix row(1, s.size(), std::vector<double>(s.begin(), s.end()));
    const Matrix p = row_softmax(row, beta);
    return {p.data().begin(), p.data().end()};
}

// Non-unit gains and nonzero biases so that every term of the block matters.
BlockParams generic_block(RngStream& rng, std::size_t d, std::size_t heads, std::size_t m) {
    BlockParams b = backbone::init_block(d, heads, 2 * d, rng);
    for (Matrix* v : {&b.ln1_gain, &b.ln2_gain}) *v = add(Matrix(1, d, 1.0), rng_normal(rng, 1, d, 0.2));
    b.ln1_bias = rng_normal(rng, 1, d, 0.1);
    b.ln2_bias = rng_normal(rng, 1, d, 0.1);
    b.mlp_in_bias = rng_normal(rng, 1, 2 * d, 0.1);
    b.mlp_out_bias = rng_normal(rng, 1, d, 0.1);
    if (m > 0) {
        b.router = routing::init_routing_params(m, d, rng);
        b.router->queries = rng_normal(rng, m, d, 1.0);
    }
    return b;
}

bool same_bytes(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

// Tokens the router of `block` reads when its input is `z`.
Matrix router_input(const Matrix& z, const BlockParams& block) {
    if (!block.route_from_normalized) return z;
    return layer_norm(z, std::span<const double>(block.ln1_gain.data()), std::span<const double>(block.ln1_bias.data()),
                      block.norm_eps);
}

}  // namespace

bool SuiteResult::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

ModelConfig toy_config() {
    ModelConfig c;
    c.depth = 2;
    c.width = 8;
    c.heads = 2;
    c.mlp_ratio = 2.0;
    c.tokens = 6;
    c.input_dim = 5;
    c.prompts = 2;
    c.routed_layers = 1;
    c.placement = backbone::Placement::First;
    c.num_classes = 4;
    c.backbone_mode = backbone::BackboneMode::FrozenRandom;
    return c;
}

SuiteResult energy(std::uint64_t seed) {
    const Timer timer;
    SuiteResult r{"energy", {}, 0.0};
    RngStream rng(seed);

    constexpr double kStep = 0.005, kTol = 0.01;
    const double betas[] = {0.5, 1.0, 4.0};
    double worst_dist = 0.0, worst_gap = -INFINITY;
    std::size_t points = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t L = 2 + static_cast<std::size_t>(trial) % 3;
        const double beta = betas[(trial / 3) % 3];
        std::vector<double> scores(L);
        for (double& s : scores) s = 2.0 * rng.normal();
        const auto soft = softmax_row(scores, beta);
        const auto grid = routing::simplex_grid_search(scores, beta, kStep);
        points += grid.points_visited;
        for (std::size_t i = 0; i < L; ++i) worst_dist = std::max(worst_dist, std::abs(grid.argmin[i] - soft[i]));
        // F(softmax) minus the smallest grid energy; must not be positive.
        worst_gap = std::max(worst_gap, routing::free_energy_from_scores(soft, scores, beta) - grid.min_energy);
    }
    r.checks.push_back({"grid minimizer within 0.01 of softmax row (100 instances)", worst_dist <= kTol,
                        "max l_inf " + sci(worst_dist) + " over " + std::to_string(points) + " grid points"});
    r.checks.push_back({"F(softmax) <= F(p) for every grid point", worst_gap <= 0.0,
                        "max F(softmax) - min grid F = " + sci(worst_gap)});

    double worst_identity = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(12);
        std::vector<double> s(n), bs(n);
        for (double& v : s) v = 2.0 * rng.normal();
        const double beta = std::exp(4.0 * rng.uniform() - 2.0);
        for (std::size_t i = 0; i < n; ++i) bs[i] = beta * s[i];
        const double expected = -log_sum_exp<double>(bs) / beta;
        worst_identity =
            std::max(worst_identity, std::abs(routing::free_energy_from_scores(softmax_row(s, beta), s, beta) - expected));
    }
    r.checks.push_back({"F(softmax(beta s)) = -logsumexp(beta s)/beta (1000 vectors)", worst_identity <= 1e-9,
                        "max abs error " + sci(worst_identity)});
    r.seconds = timer.seconds();
    return r;
}

SuiteResult gradients() {
    const Timer timer;
    SuiteResult r{"gradients", {}, 0.0};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RngStream rng(seed);
        const auto report = training::grad_check(toy_config(), rng, 1e-4);
        for (const auto& g : report.groups)
            r.checks.push_back({"seed " + std::to_string(seed) + " " + g.name, g.max_rel_err < 1e-4,
                                "max rel err " + sci(g.max_rel_err)});
    }
    r.seconds = timer.seconds();
    return r;
}

SuiteResult invariants(std::size_t cases, std::uint64_t seed) {
    const Timer timer;
    SuiteResult r{"invariants", {}, 0.0};
    RngStream root(seed);

    {
        RngStream rng = root.fork(1);
        double worst_row = 0.0, worst_hull = 0.0;
        bool negative = false;
        for (std::size_t trial = 0; trial < cases; ++trial) {
            const std::size_t d = 1 + rng.uniform_index(8), L = 1 + rng.uniform_index(10), m = 1 + rng.uniform_index(6);
            routing::RoutingParams p = routing::init_routing_params(m, d, rng);
            p.queries = rng_normal(rng, m, d, 1.0);
            p.beta = std::exp(4.0 * rng.uniform() - 2.0);
            const Matrix z = rng_normal(rng, L, d, 2.0);
            routing::Projections pr;
            const auto out = routing::route(z, p, &pr);
            for (std::size_t i = 0; i < m; ++i) {
                double sum = 0.0;
                for (double w : out.weights.row(i)) {
                    negative = negative || w < 0.0;
                    sum += w;
                }
                worst_row = std::max(worst_row, std::abs(sum - 1.0));
            }
            for (std::size_t j = 0; j < d; ++j) {
                double lo = pr.values(0, j), hi = pr.values(0, j);
                for (std::size_t t = 1; t < L; ++t) {
                    lo = std::min(lo, pr.values(t, j));
                    hi = std::max(hi, pr.values(t, j));
                }
                for (std::size_t i = 0; i < m; ++i)
                    worst_hull = std::max({worst_hull, lo - out.prompts(i, j), out.prompts(i, j) - hi});
            }
        }
        r.checks.push_back({"routing rows stochastic", !negative && worst_row <= 1e-9,
                            "max |row sum - 1| " + sci(worst_row) + (negative ? ", negative weight seen" : "")});
        r.checks.push_back({"retrieved prompts inside the value hull", worst_hull <= 1e-9,
                            "max hull violation " + sci(std::max(worst_hull, 0.0))});
    }
    {
        RngStream rng = root.fork(2);
        double worst = 0.0;
        for (std::size_t trial = 0; trial < cases; ++trial) {
            const std::size_t heads = 1 + rng.uniform_index(3);
            const std::size_t d = heads * (1 + rng.uniform_index(4));
            const std::size_t n = 1 + rng.uniform_index(7);
            BlockParams plain = generic_block(rng, d, heads, 0);
            BlockParams routed = plain;
            routed.router = routing::init_routing_params(0, d, rng);
            const Matrix z = rng_normal(rng, n, d, 1.5);
            worst = std::max(worst, max_abs_diff(backbone::rwf_block_forward(z, routed),
                                                 backbone::standard_block_forward(z, plain)));
        }
        r.checks.push_back({"m=0 block equals standard block", worst <= 1e-12, "max abs diff " + sci(worst)});
    }
    {
        RngStream rng = root.fork(3);
        double worst = 0.0;
        for (std::size_t trial = 0; trial < cases; ++trial) {
            const std::size_t heads = 1 + rng.uniform_index(2);
            const std::size_t d = heads * (2 + rng.uniform_index(3));
            const std::size_t n = 1 + rng.uniform_index(6), m = 2 + rng.uniform_index(4);
            BlockParams b = generic_block(rng, d, heads, m);
            const Matrix z = rng_normal(rng, n, d, 1.0);
            const Matrix base = backbone::rwf_block_forward(z, b);
            const auto perm = rng_permutation(rng, m);
            const Matrix q = b.router->queries;
            for (std::size_t i = 0; i < m; ++i)
                std::copy(q.row(perm[i]).begin(), q.row(perm[i]).end(), b.router->queries.row(i).begin());
            worst = std::max(worst, max_abs_diff(backbone::rwf_block_forward(z, b), base));
        }
        r.checks.push_back({"block output invariant to prompt permutation", worst <= 1e-9, "max abs diff " + sci(worst)});
    }
    {
        RngStream rng = root.fork(4);
        std::size_t changed_frozen = 0, untouched_trainable = 0, frozen_seen = 0;
        for (std::size_t trial = 0; trial < cases; ++trial) {
            ModelConfig c;
            c.heads = 1 + rng.uniform_index(2);
            c.width = c.heads * (2 + rng.uniform_index(2));
            c.depth = 1 + rng.uniform_index(2);
            c.tokens = 1 + rng.uniform_index(3);
            c.input_dim = 1 + rng.uniform_index(3);
            c.prompts = 1 + rng.uniform_index(3);
            c.routed_layers = rng.uniform_index(c.depth + 1);
            c.placement = rng.uniform_index(2) ? backbone::Placement::Last : backbone::Placement::First;
            c.num_classes = 2 + rng.uniform_index(3);
            c.backbone_mode = rng.uniform_index(2) ? backbone::BackboneMode::PretrainThenFreeze
                                                   : backbone::BackboneMode::FrozenRandom;
            Model model = backbone::build_model(c, rng);
            const Model before = model;
            training::OptState opt = training::init_opt_state(model, AdamConfig{.lr = 1e-2});
            for (int step = 0; step < 2; ++step) {
                std::vector<stream::Sample> batch(2);
                for (auto& s : batch) {
                    s.tokens = rng_normal(rng, c.tokens, c.input_dim, 1.0);
                    s.label = rng.uniform_index(c.num_classes);
                }
                training::train_step(model, batch, opt, ClassMask::all(c.num_classes));
            }
            const auto now = backbone::parameters(std::as_const(model));
            const auto was = backbone::parameters(before);
            for (std::size_t i = 0; i < now.size(); ++i) {
                const bool same = same_bytes(*now[i].value, *was[i].value);
                if (!now[i].trainable) {
                    ++frozen_seen;
                    if (!same) ++changed_frozen;
                } else if (now[i].name.starts_with("head") && same) {
                    ++untouched_trainable;
                }
            }
        }
        r.checks.push_back({"frozen W_K/W_V and backbone byte-identical after training", changed_frozen == 0,
                            std::to_string(changed_frozen) + " of " + std::to_string(frozen_seen) +
                                " frozen tensors changed"});
        r.checks.push_back({"head updated by training", untouched_trainable == 0,
                            std::to_string(untouched_trainable) + " heads left untouched"});
    }
    r.seconds = timer.seconds();
    return r;
}

SuiteResult smoothness(std::uint64_t seed) {
    const Timer timer;
    SuiteResult r{"smoothness", {}, 0.0};
    RngStream rng(seed);
    routing::RoutingParams p = routing::init_routing_params(3, 4, rng);
    p.queries = rng_normal(rng, 3, 4, 1.0);
    const Matrix z = rng_normal(rng, 6, 4, 1.0);
    p.beta = 0.01;
    RngStream a(seed + 1000), b(seed + 1000);
    const auto cold = routing::lipschitz_probe(z, p, 1000, 1e-3, a);
    p.beta = 10.0;
    const auto hot = routing::lipschitz_probe(z, p, 1000, 1e-3, b);
    const bool finite = std::all_of(cold.ratios.begin(), cold.ratios.end(), [](double v) { return std::isfinite(v); }) &&
                        std::all_of(hot.ratios.begin(), hot.ratios.end(), [](double v) { return std::isfinite(v); });
    r.checks.push_back({"median ratio beta=0.01 < beta=10", cold.median_ratio < hot.median_ratio,
                        sci(cold.median_ratio) + " vs " + sci(hot.median_ratio)});
    r.checks.push_back({"all ratios finite", finite, std::to_string(cold.ratios.size() + hot.ratios.size()) + " ratios"});
    r.seconds = timer.seconds();
    return r;
}

SuiteResult parameters() {
    const Timer timer;
    SuiteResult r{"parameters", {}, 0.0};
    const ModelConfig c = toy_config();
    const std::size_t d = c.width, h = c.hidden(), C = c.num_classes, m = c.prompts;
    const std::size_t embed = c.input_dim * d + d + (c.tokens + 1) * d;
    const std::size_t block = 2 * d + 4 * d * d + 2 * d + (d * h + h) + (h * d + d);
    const std::size_t router = m * d + 3 * d * d;
    const std::size_t head = d * C + C;
    const std::size_t total = embed + c.depth * block + c.routed_layers * router + 2 * d + head;
    const std::size_t trainable = c.routed_layers * (m * d + d * d) + head;
    RngStream rng(1);
    const auto pc = backbone::count_params(backbone::build_model(c, rng));
    r.checks.push_back({"toy model total = shape arithmetic", pc.total == total,
                        std::to_string(pc.total) + " vs " + std::to_string(total)});
    r.checks.push_back({"toy model trainable = shape arithmetic", pc.trainable == trainable,
                        std::to_string(pc.trainable) + " vs " + std::to_string(trainable)});
    bool increments = true;
    std::string detail;
    ModelConfig k = c;
    k.routed_layers = 0;
    std::size_t prev = backbone::count_params(backbone::build_model(k, rng)).trainable;
    for (std::size_t routers = 1; routers <= c.depth; ++routers) {
        k.routed_layers = routers;
        const std::size_t now = backbone::count_params(backbone::build_model(k, rng)).trainable;
        increments = increments && now - prev == m * d + d * d;
        detail += (detail.empty() ? "" : ", ") + std::to_string(now - prev);
        prev = now;
    }
    r.checks.push_back({"each router adds m*d + d^2 trainable", increments,
                        "increments " + detail + " (expected " + std::to_string(m * d + d * d) + ")"});
    r.seconds = timer.seconds();
    return r;
}

std::vector<ProbeRow> probe_model(const Model& model, const Matrix& x, const std::vector<double>& betas,
                                  std::size_t samples, double delta, std::uint64_t seed) {
    std::vector<ProbeRow> rows;
    const auto inputs = backbone::block_inputs(x, model);
    for (std::size_t layer = 0; layer < model.blocks.size(); ++layer) {
        const BlockParams& block = model.blocks[layer];
        if (!block.is_rwf()) continue;
        const Matrix tokens = router_input(inputs[layer], block);
        routing::RoutingParams p = *block.router;
        for (double beta : betas) {
            p.beta = beta;
            // Same perturbations for every beta of a layer.
            RngStream rng = RngStream(seed).fork(layer);
            const auto st = routing::lipschitz_probe(tokens, p, samples, delta, rng);
            rows.push_back({layer, beta, delta, samples, st.median_ratio, st.max_ratio});
        }
    }
    return rows;
}

std::string probe_csv(const std::vector<ProbeRow>& rows) {
    std::ostringstream os;
    os << kProbeHeader << '\n' << std::setprecision(17);
    for (const auto& r : rows)
        os << r.layer << ',' << r.beta << ',' << r.delta << ',' << r.samples << ',' << r.median_ratio << ','
           << r.max_ratio << '\n';
    return os.str();
}

}  // namespace rwf::verify
