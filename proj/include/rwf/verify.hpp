#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rwf/backbone.hpp"

namespace rwf::verify {

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct SuiteResult {
    std::string suite;
    std::vector<Check> checks;
    double seconds = 0.0;
    bool pass() const;
};

// Grid-search minimizer vs routing softmax (100 instances, grid step 0.005)
// and the closed-form free energy at the softmax (1000 score vectors).
SuiteResult energy(std::uint64_t seed = 1);

// Finite-difference gradient check of every trainable group on the toy
// model, seeds 1..5.
SuiteResult gradients();

// Stochastic rows, hull bounds, m=0 equivalence, prompt-permutation
// invariance and frozen-parameter byte identity, `cases` fuzzed cases each.
SuiteResult invariants(std::size_t cases = 1000, std::uint64_t seed = 1);

// Median Lipschitz ratio of the routing map grows from beta=0.01 to beta=10.
SuiteResult smoothness(std::uint64_t seed = 1);

// count_params against shape arithmetic on the toy model.
SuiteResult parameters();

// depth 2, d 8, L 6, m 2, 2 heads, one router on the first block.
backbone::ModelConfig toy_config();

struct ProbeRow {
    std::size_t layer = 0;
    double beta = 0.0;
    double delta = 0.0;
    std::size_t samples = 0;
    double median_ratio = 0.0;
    double max_ratio = 0.0;
};

// Lipschitz probe of every router in `model` on the tokens each router reads
// for input `x`, once per beta. Empty when the model has no routers.
std::vector<ProbeRow> probe_model(const backbone::Model& model, const Matrix& x, const std::vector<double>& betas,
                                  std::size_t samples, double delta, std::uint64_t seed);

inline constexpr const char* kProbeHeader = "layer,beta,delta,samples,median_ratio,max_ratio";
std::string probe_csv(const std::vector<ProbeRow>& rows);

}  // namespace rwf::verify
