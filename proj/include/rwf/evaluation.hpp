#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rwf/backbone.hpp"
#include "rwf/numerics/adam.hpp"
#include "rwf/stream.hpp"
#include "rwf/training.hpp"

namespace rwf::evaluation {

// a(i, t): accuracy on task i's test set after training through task t (i <= t).
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t tasks);

    std::size_t num_tasks() const noexcept { return tasks_; }
    void set(std::size_t i, std::size_t t, double acc);
    bool has(std::size_t i, std::size_t t) const;
    double at(std::size_t i, std::size_t t) const;
    bool column_complete(std::size_t t) const;
    bool complete() const;

private:
    std::size_t index(std::size_t i, std::size_t t) const;
    std::size_t tasks_ = 0;
    std::vector<std::optional<double>> cells_;
};

// Mean of the last column.
double final_average_accuracy(const AccuracyMatrix& m);
// Mean over the first T-1 tasks of (best accuracy seen - final accuracy).
double forgetting(const AccuracyMatrix& m);

// Accuracy of masked argmax on `samples`; every prediction is checked
// against the mask.
double accuracy(const backbone::Model& model, const std::vector<stream::Sample>& samples, const ClassMask& mask);

// Accuracies a(i, t) for i <= t, predicting over the classes of tasks 0..t.
std::vector<double> evaluate_seen(const backbone::Model& model, const stream::TaskStream& stream, std::size_t t);

enum class Method { RwF, Finetune, Joint };
const char* to_string(Method m) noexcept;
Method method_from_string(const std::string& s);

// Offline training on a held-out synthetic base distribution that stands in
// for a pre-trained backbone (backbone_mode = pretrain_then_freeze).
struct PretrainConfig {
    std::size_t classes = 8;
    std::size_t samples_per_class = 100;
    std::size_t epochs = 3;
    double lr = 1e-3;
};

struct ExperimentConfig {
    Method method = Method::RwF;
    // tokens, input_dim and num_classes are taken from `stream`.
    backbone::ModelConfig model;
    stream::StreamConfig stream;
    AdamConfig optimizer{.lr = 1e-2};
    std::size_t batch_size = 16;
    std::vector<std::uint64_t> seeds{0};
    PretrainConfig pretrain;

    // Throws ConfigError.
    void validate() const;
    // The model config actually built for `method`.
    backbone::ModelConfig resolved_model() const;
};

struct SeedRun {
    std::uint64_t seed = 0;
    AccuracyMatrix acc;
    double a_final = 0.0;
    std::optional<double> forgetting;  // absent for Joint
    std::size_t samples_trained = 0;
    std::size_t expected_samples = 0;
    std::vector<double> task_losses;  // mean training loss per task (one entry for Joint)
    backbone::ParamCount params;
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // sample std, 0 for one value
};
Stat summarize(const std::vector<double>& values);

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<SeedRun> runs;
    Stat a_final;
    std::optional<Stat> forgetting;
    backbone::ParamCount params;
    std::size_t samples_trained = 0;  // summed over seeds
    double wall_clock_seconds = 0.0;
    // Model and optimizer state after the last seed, for checkpointing.
    std::optional<backbone::Model> final_model;
    std::optional<training::OptState> final_opt;
};

// Pretrains the backbone of `model` in place (routers untouched).
void pretrain_backbone(backbone::Model& model, const ExperimentConfig& exp, std::uint64_t seed);

// The stream run_seed builds its model from.
RngStream model_rng(std::uint64_t seed);

SeedRun run_seed(const ExperimentConfig& exp, std::uint64_t seed, backbone::Model* final_model = nullptr,
                 training::OptState* final_opt = nullptr);

ExperimentReport run_experiment(const ExperimentConfig& exp);

struct ProbeConfig {
    std::size_t epochs = 20;
    double lr = 1e-2;
    std::size_t batch_size = 16;
};

// Test accuracy on task 0 of a linear head trained offline (several epochs)
// on features of a frozen, randomly initialized, router-free backbone.
double linear_probe_accuracy(const stream::StreamConfig& stream_config, const backbone::ModelConfig& model_config,
                             std::uint64_t seed, const ProbeConfig& probe = {});

// Thrown when the number of samples that went through backward differs from
// the stream's training-set size.
class AccountingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rwf::evaluation
