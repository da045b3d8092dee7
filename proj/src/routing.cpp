#include "rwf/routing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "rwf/numerics/ops.hpp"

namespace rwf::routing {

RoutingParams init_routing_params(std::size_t num_prompts, std::size_t width, RngStream& rng) {
    if (width == 0) throw std::invalid_argument("init_routing_params: width must be > 0");
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(width));
    RoutingParams p;
    p.queries = rng_normal(rng, num_prompts, width, 0.02);
    p.query_proj = rng_normal(rng, width, width, proj_std);
    p.key_proj = rng_normal(rng, width, width, proj_std);
    p.value_proj = rng_normal(rng, width, width, proj_std);
    p.beta = proj_std;
    return p;
}

Projections project(const Matrix& tokens, const RoutingParams& params) {
    if (tokens.cols() != params.width())
        throw std::invalid_argument("routing::project: token width " + std::to_string(tokens.cols()) +
                                    " != router width " + std::to_string(params.width()));
    return {matmul(tokens, params.key_proj), matmul(tokens, params.value_proj),
            matmul(params.queries, params.query_proj)};
}

Matrix routing_matrix(const Matrix& routed_queries, const Matrix& keys, double beta) {
    return row_softmax(matmul_nt(routed_queries, keys), beta);
}

Matrix retrieve(const Matrix& weights, const Matrix& values) {
    return matmul(weights, values);
}

RoutingOutput route(const Matrix& tokens, const RoutingParams& params, Projections* proj) {
    Projections local = project(tokens, params);
    RoutingOutput out;
    out.scores = matmul_nt(local.routed_queries, local.keys);
    out.weights = row_softmax(out.scores, params.beta);
    out.prompts = retrieve(out.weights, local.values);
    if (proj) *proj = std::move(local);
    return out;
}

RoutingGrads route_backward(const Matrix& tokens, const RoutingParams& params, const Projections& proj,
                            const RoutingOutput& out, const Matrix& grad_prompts) {
    RoutingGrads g;
    // P = A V
    const Matrix grad_weights = matmul_nt(grad_prompts, proj.values);
    const Matrix grad_values = matmul_tn(out.weights, grad_prompts);
    // A = softmax(beta * Q~ K^T)
    const Matrix grad_scores = row_softmax_backward(out.weights, grad_weights, params.beta);
    const Matrix grad_routed = matmul(grad_scores, proj.keys);
    const Matrix grad_keys = matmul_tn(grad_scores, proj.routed_queries);

    g.queries = matmul_nt(grad_routed, params.query_proj);
    g.query_proj = matmul_tn(params.queries, grad_routed);
    g.key_proj = matmul_tn(tokens, grad_keys);
    g.value_proj = matmul_tn(tokens, grad_values);
    g.tokens = matmul_nt(grad_keys, params.key_proj);
    add_inplace(g.tokens, matmul_nt(grad_values, params.value_proj));
    return g;
}

double free_energy_from_scores(std::span<const double> p, std::span<const double> scores, double beta) {
    if (!(beta > 0.0)) throw std::invalid_argument("free_energy: beta must be > 0");
    if (p.size() != scores.size()) throw std::invalid_argument("free_energy: length mismatch");
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw std::invalid_argument("free_energy: negative probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-8) throw std::invalid_argument("free_energy: p is off the simplex");
    double align = 0.0, neg_entropy = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        align += p[i] * scores[i];
        if (p[i] > 0.0) neg_entropy += p[i] * std::log(p[i]);
    }
    return -align + neg_entropy / beta;
}

namespace {
std::vector<double> scores_for(std::span<const double> routed_query, const Matrix& keys) {
    if (routed_query.size() != keys.cols()) throw std::invalid_argument("free_energy: query/key width mismatch");
    std::vector<double> s(keys.rows());
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        auto k = keys.row(i);
        for (std::size_t j = 0; j < k.size(); ++j) s[i] += routed_query[j] * k[j];
    }
    return s;
}
}  // namespace

double free_energy(std::span<const double> p, std::span<const double> routed_query, const Matrix& keys,
                   double beta) {
    return free_energy_from_scores(p, scores_for(routed_query, keys), beta);
}

SimplexSearch simplex_grid_search(std::span<const double> scores, double beta, double grid_step) {
    const std::size_t L = scores.size();
    if (L == 0 || L > kMaxOracleTokens)
        throw std::invalid_argument("simplex_grid_search: token count must be in [1, " +
                                    std::to_string(kMaxOracleTokens) + "]");
    if (!(grid_step > 0.0) || grid_step > 0.01)
        throw std::invalid_argument("simplex_grid_search: grid_step must be in (0, 0.01]");
    if (!(beta > 0.0)) throw std::invalid_argument("simplex_grid_search: beta must be > 0");
    const double nd = std::round(1.0 / grid_step);
    if (std::abs(nd * grid_step - 1.0) > 1e-9)
        throw std::invalid_argument("simplex_grid_search: 1/grid_step must be an integer");
    const auto n = static_cast<int>(nd);

    // c ln(c/n) / n tabulated once; F(p) = sum_i [ -p_i s_i + beta^-1 p_i ln p_i ].
    std::vector<double> xlogx(static_cast<std::size_t>(n) + 1);
    for (int c = 1; c <= n; ++c) {
        const double p = c / nd;
        xlogx[static_cast<std::size_t>(c)] = p * std::log(p) / beta;
    }
    auto term = [&](std::size_t i, int c) { return -(c / nd) * scores[i] + xlogx[static_cast<std::size_t>(c)]; };

    SimplexSearch best;
    best.min_energy = std::numeric_limits<double>::infinity();
    std::vector<int> counts(L, 0);
    std::vector<int> best_counts;

    // Depth-first enumeration in lexicographic order; last coordinate takes the remainder.
    auto visit = [&](auto&& self, std::size_t idx, int remaining, double partial) -> void {
        if (idx + 1 == L) {
            counts[idx] = remaining;
            const double f = partial + term(idx, remaining);
            ++best.points_visited;
            if (f < best.min_energy) {
                best.min_energy = f;
                best_counts = counts;
            }
            return;
        }
        for (int c = 0; c <= remaining; ++c) {
            counts[idx] = c;
            self(self, idx + 1, remaining - c, partial + term(idx, c));
        }
    };
    visit(visit, 0, n, 0.0);

    best.argmin.resize(L);
    for (std::size_t i = 0; i < L; ++i) best.argmin[i] = best_counts[i] / nd;
    return best;
}

std::vector<double> energy_minimizer_oracle(std::span<const double> routed_query, const Matrix& keys, double beta,
                                            double grid_step) {
    return simplex_grid_search(scores_for(routed_query, keys), beta, grid_step).argmin;
}

LipschitzStats lipschitz_probe(const Matrix& tokens, const RoutingParams& params, std::size_t n_samples,
                               double delta, RngStream& rng) {
    if (!(delta > 0.0)) throw std::invalid_argument("lipschitz_probe: delta must be > 0");
    LipschitzStats stats;
    const Matrix base = route(tokens, params).weights;
    stats.ratios.reserve(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        Matrix dz = rng_normal(rng, tokens.rows(), tokens.cols(), 1.0);
        const double norm = frobenius_norm(dz);
        for (double& v : dz.data()) v *= delta / norm;
        const Matrix moved = route(add(tokens, dz), params).weights;
        Matrix diff = moved;
        add_inplace(diff, base, -1.0);
        stats.ratios.push_back(frobenius_norm(diff) / delta);
    }
    if (!stats.ratios.empty()) {
        std::vector<double> sorted = stats.ratios;
        std::sort(sorted.begin(), sorted.end());
        stats.max_ratio = sorted.back();
        const std::size_t mid = sorted.size() / 2;
        stats.median_ratio = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    }
    return stats;
}

}  // namespace rwf::routing
