#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rwf/numerics/matrix.hpp"
#include "rwf/numerics/rng.hpp"

namespace rwf::routing {

// Parameters of one HopfieldPooling router. `queries` and `query_proj` are
// learnable; `key_proj` and `value_proj` are frozen at initialization.
struct RoutingParams {
    Matrix queries;     // m x d
    Matrix query_proj;  // d x d  (W_Q)
    Matrix key_proj;    // d x d  (W_K, frozen)
    Matrix value_proj;  // d x d  (W_V, frozen)
    double beta = 1.0;

    std::size_t num_prompts() const noexcept { return queries.rows(); }
    std::size_t width() const noexcept { return query_proj.rows(); }
};

// Q ~ N(0, 0.02^2); projections ~ N(0, 1/d); beta = 1/sqrt(d).
RoutingParams init_routing_params(std::size_t num_prompts, std::size_t width, RngStream& rng);

struct Projections {
    Matrix keys;           // L x d
    Matrix values;         // L x d
    Matrix routed_queries; // m x d
};

struct RoutingOutput {
    Matrix weights;  // A, m x L, row-stochastic
    Matrix prompts;  // P, m x d
    Matrix scores;   // Q_tilde K^T, m x L (before beta)
};

Projections project(const Matrix& tokens, const RoutingParams& params);
Matrix routing_matrix(const Matrix& routed_queries, const Matrix& keys, double beta);
Matrix retrieve(const Matrix& weights, const Matrix& values);

// Full forward pass of the router. When `proj` is non-null the projections
// are kept for the backward pass.
RoutingOutput route(const Matrix& tokens, const RoutingParams& params, Projections* proj = nullptr);

struct RoutingGrads {
    Matrix tokens;      // dL/dZ
    Matrix queries;
    Matrix query_proj;
    Matrix key_proj;
    Matrix value_proj;
};

RoutingGrads route_backward(const Matrix& tokens, const RoutingParams& params, const Projections& proj,
                            const RoutingOutput& out, const Matrix& grad_prompts);

// F(p) = -sum_i p_i s_i + beta^-1 sum_i p_i ln p_i  with 0 ln 0 = 0, where
// s_i = <q_tilde, k_i>. softmax(beta * s) is its unique minimizer on the simplex.
double free_energy_from_scores(std::span<const double> p, std::span<const double> scores, double beta);
double free_energy(std::span<const double> p, std::span<const double> routed_query, const Matrix& keys,
                   double beta);

struct SimplexSearch {
    std::vector<double> argmin;
    double min_energy = 0.0;
    std::size_t points_visited = 0;
};

constexpr std::size_t kMaxOracleTokens = 4;

// Exhaustive search over the simplex grid {c / n : sum c = n}, n = 1/grid_step.
// Ties resolve to the lexicographically smallest grid point.
SimplexSearch simplex_grid_search(std::span<const double> scores, double beta, double grid_step);

std::vector<double> energy_minimizer_oracle(std::span<const double> routed_query, const Matrix& keys, double beta,
                                            double grid_step);

struct LipschitzStats {
    std::vector<double> ratios;
    double max_ratio = 0.0;
    double median_ratio = 0.0;
};

// Empirical ||A(Z + dZ) - A(Z)||_F / ||dZ||_F for random dZ of norm delta.
LipschitzStats lipschitz_probe(const Matrix& tokens, const RoutingParams& params, std::size_t n_samples,
                               double delta, RngStream& rng);

}  // namespace rwf::routing
