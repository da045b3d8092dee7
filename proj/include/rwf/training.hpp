#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rwf/backbone.hpp"
#include "rwf/numerics/adam.hpp"
#include "rwf/numerics/ops.hpp"
#include "rwf/stream.hpp"

namespace rwf::training {

// Adam state for the trainable subset of a model, aligned with the order of
// backbone::parameters().
struct OptState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::vector<std::string> names;
    std::vector<AdamMoments> moments;
    // Samples that went through train_step with this state.
    std::uint64_t samples_seen = 0;
};

OptState init_opt_state(const backbone::Model& model, const AdamConfig& config);

struct BackwardResult {
    double loss = 0.0;
    backbone::Model grads;  // same layout as the model; frozen entries are computed too
};

// Mean cross-entropy of the batch and its exact gradient. Entries outside
// `scope` stay zero.
BackwardResult backward(const backbone::Model& model, std::span<const stream::Sample> batch, const ClassMask& mask,
                        backbone::GradScope scope = {});

// The narrowest scope that still covers every trainable parameter.
backbone::GradScope trainable_scope(const backbone::Model& model);

double batch_loss(const backbone::Model& model, std::span<const stream::Sample> batch, const ClassMask& mask);

// backward + one Adam update on every trainable parameter. Returns the loss.
double train_step(backbone::Model& model, std::span<const stream::Sample> batch, OptState& opt,
                  const ClassMask& mask);

struct GroupCheck {
    std::string name;
    std::size_t coordinates = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GroupCheck> groups;
    bool pass = false;
    double worst() const;
};

struct GradCheckOptions {
    double fd_eps = 1e-5;
    std::size_t batch_size = 3;
    // Also check parameters outside the trainable set.
    bool include_frozen = false;
    // Applied to the analytic gradient before comparison (fault injection).
    std::function<void(backbone::Model&)> corrupt;
};

// Per-coordinate relative error max(|a - f| / (|a| + |f| + 1e-12)) between
// backward() and central differences on a fixed random batch.
GradCheckReport grad_check(const backbone::ModelConfig& config, RngStream& rng, double tol,
                           const GradCheckOptions& options = {});

}  // namespace rwf::training
