#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rwf/numerics/matrix.hpp"

namespace rwf::stream {

// A training sample was requested a second time.
class SinglePassViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DatasetFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Sample {
    Matrix tokens;  // L_in x input_dim
    std::size_t label = 0;
    std::size_t task = 0;  // bookkeeping only, never shown to the model
};

using Batch = std::vector<Sample>;

enum class ClassGeometry { SubspaceClusters };

struct StreamConfig {
    std::size_t tasks = 5;
    std::size_t classes_per_task = 4;
    std::size_t samples_per_class = 100;
    double few_shot_fraction = 1.0;
    std::size_t tokens = 8;
    std::size_t input_dim = 32;
    ClassGeometry class_geometry = ClassGeometry::SubspaceClusters;
    double noise_std = 0.3;
    std::uint64_t seed = 0;

    std::size_t num_classes() const noexcept { return tasks * classes_per_task; }
    void validate() const;
};

struct Task {
    std::vector<std::size_t> classes;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// Ordered tasks with disjoint class sets. Training samples may be drawn
// exactly once; test samples are never consumed.
class TaskStream {
public:
    TaskStream() = default;
    TaskStream(std::vector<Task> tasks, std::size_t num_classes);

    const std::vector<Task>& tasks() const& noexcept { return tasks_; }
    std::vector<Task> tasks() && { return std::move(tasks_); }
    std::size_t num_tasks() const noexcept { return tasks_.size(); }
    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t total_train() const noexcept;
    // Number of training samples handed out so far.
    std::size_t consumed() const noexcept { return consumed_; }
    bool task_consumed(std::size_t task) const;

    // Seeded shuffle of one task's training set, cut into batches (last one
    // may be short). Marks the task consumed; a second call throws.
    std::vector<Batch> iterate_single_pass(std::size_t task, std::size_t batch_size, std::uint64_t seed);
    // Same, over the shuffled union of every task (Joint reference).
    std::vector<Batch> iterate_union_single_pass(std::size_t batch_size, std::uint64_t seed);

private:
    std::vector<Task> tasks_;
    std::size_t num_classes_ = 0;
    std::vector<bool> consumed_task_;
    std::size_t consumed_ = 0;
};

// Class-specific token subspaces plus Gaussian noise; 80/20 split per class.
TaskStream make_synthetic_stream(const StreamConfig& config);

// Flat labeled samples, the unit of the RWFD file format.
struct Dataset {
    std::size_t tokens = 0;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::vector<Sample> samples;
};

std::string encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::string& bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

// Seeded class shuffle, T equal class groups, seeded 80/20 split per class.
TaskStream split_tasks(const std::vector<Sample>& samples, std::size_t num_classes, std::size_t num_tasks,
                       std::uint64_t seed);

// Keeps ceil(fraction * n) training samples per class: a prefix of a seeded
// per-class shuffle, so smaller fractions give nested subsets.
TaskStream subsample_fraction(const TaskStream& stream, double fraction, std::uint64_t seed);

// JSON sidecar: {"version":1,"num_classes":C,"tasks":[[ids...],...]}.
std::string partition_json(const TaskStream& stream);

// All samples (task order, train then test) in RWFD form, followed by the
// partition sidecar. Used for determinism checks.
std::string serialize_stream(const TaskStream& stream);

}  // namespace rwf::stream
