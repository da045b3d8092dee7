#include "rwf/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rwf/numerics/binary_io.hpp"
#include "rwf/numerics/rng.hpp"

namespace rwf::stream {

namespace {

constexpr char kMagic[4] = {'R', 'W', 'F', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr double kTrainShare = 0.8;
// Per-token jitter on the class coefficients, relative to noise_std.
constexpr double kJitterRatio = 0.5;

using Reader = ByteReader<DatasetFormatError>;

double round_to_f32(double v) {
    return static_cast<double>(static_cast<float>(v));
}

std::size_t ceil_count(double fraction, std::size_t n) {
    // ceil with a small guard so that e.g. 0.7 * 80 stays 56
    return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

std::map<std::size_t, std::vector<std::size_t>> indices_by_class(const std::vector<Sample>& samples) {
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);
    return by_class;
}

}  // namespace

void StreamConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("stream config: " + m); };
    if (tasks == 0) fail("tasks must be > 0");
    if (classes_per_task == 0) fail("classes_per_task must be > 0");
    if (samples_per_class < 2) fail("samples_per_class must be >= 2 (train/test split)");
    if (!(few_shot_fraction > 0.0 && few_shot_fraction <= 1.0)) fail("few_shot_fraction must be in (0, 1]");
    if (tokens == 0 || input_dim < 2) fail("tokens must be > 0 and input_dim >= 2");
    if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
}

TaskStream::TaskStream(std::vector<Task> tasks, std::size_t num_classes)
    : tasks_(std::move(tasks)), num_classes_(num_classes), consumed_task_(tasks_.size(), false) {
    std::vector<int> owner(num_classes_, -1);
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
        for (std::size_t c : tasks_[t].classes) {
            if (c >= num_classes_) throw std::invalid_argument("TaskStream: class id out of range");
            if (owner[c] != -1) throw std::invalid_argument("TaskStream: class sets of tasks overlap");
            owner[c] = static_cast<int>(t);
        }
        for (const auto* split : {&tasks_[t].train, &tasks_[t].test})
            for (const auto& s : *split)
                if (s.label >= num_classes_ || owner[s.label] != static_cast<int>(t))
                    throw std::invalid_argument("TaskStream: sample label outside its task's class set");
    }
}

std::size_t TaskStream::total_train() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tasks_) n += t.train.size();
    return n;
}

bool TaskStream::task_consumed(std::size_t task) const {
    return consumed_task_.at(task);
}

std::vector<Batch> TaskStream::iterate_single_pass(std::size_t task, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) throw std::invalid_argument("iterate_single_pass: batch_size must be > 0");
    if (task >= tasks_.size()) throw std::out_of_range("iterate_single_pass: no task " + std::to_string(task));
    if (consumed_task_[task])
        throw SinglePassViolation("task " + std::to_string(task) + " was already streamed once");
    consumed_task_[task] = true;
    const auto& train = tasks_[task].train;
    RngStream rng = RngStream(seed).fork(task);
    const auto order = rng_permutation(rng, train.size());
    std::vector<Batch> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        Batch b;
        for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) b.push_back(train[order[j]]);
        batches.push_back(std::move(b));
    }
    consumed_ += train.size();
    return batches;
}

std::vector<Batch> TaskStream::iterate_union_single_pass(std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) throw std::invalid_argument("iterate_union_single_pass: batch_size must be > 0");
    std::vector<const Sample*> all;
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
        if (consumed_task_[t]) throw SinglePassViolation("task " + std::to_string(t) + " was already streamed once");
        for (const auto& s : tasks_[t].train) all.push_back(&s);
    }
    std::fill(consumed_task_.begin(), consumed_task_.end(), true);
    RngStream rng = RngStream(seed).fork(0xA11);
    rng.shuffle(all);
    std::vector<Batch> batches;
    for (std::size_t i = 0; i < all.size(); i += batch_size) {
        Batch b;
        for (std::size_t j = i; j < std::min(all.size(), i + batch_size); ++j) b.push_back(*all[j]);
        batches.push_back(std::move(b));
    }
    consumed_ += all.size();
    return batches;
}

TaskStream make_synthetic_stream(const StreamConfig& config) {
    config.validate();
    const std::size_t C = config.num_classes();
    const std::size_t D = config.input_dim;
    const std::size_t L = config.tokens;
    RngStream root(config.seed);
    std::vector<Sample> samples;
    samples.reserve(C * config.samples_per_class);
    for (std::size_t c = 0; c < C; ++c) {
        RngStream geo = root.fork(0x6E0 + c);
        // Orthonormal pair spanning the class subspace (Gram-Schmidt).
        Matrix basis = rng_normal(geo, 2, D, 1.0);
        auto u = basis.row(0), v = basis.row(1);
        double nu = 0.0;
        for (double x : u) nu += x * x;
        nu = std::sqrt(nu);
        for (double& x : u) x /= nu;
        double proj = 0.0;
        for (std::size_t j = 0; j < D; ++j) proj += u[j] * v[j];
        for (std::size_t j = 0; j < D; ++j) v[j] -= proj * u[j];
        double nv = 0.0;
        for (double x : v) nv += x * x;
        nv = std::sqrt(nv);
        for (double& x : v) x /= nv;
        // Mean token pattern: per-token coordinates in the class subspace.
        const Matrix pattern = rng_normal(geo, L, 2, 1.0);

        const double jitter = kJitterRatio * config.noise_std;
        RngStream draw = root.fork(0x5A0000 + c);
        for (std::size_t s = 0; s < config.samples_per_class; ++s) {
            Sample smp;
            smp.label = c;
            smp.tokens = Matrix(L, D);
            for (std::size_t t = 0; t < L; ++t) {
                const double a = pattern(t, 0) + jitter * draw.normal();
                const double b = pattern(t, 1) + jitter * draw.normal();
                for (std::size_t j = 0; j < D; ++j)
                    smp.tokens(t, j) = round_to_f32(a * u[j] + b * v[j] + config.noise_std * draw.normal());
            }
            samples.push_back(std::move(smp));
        }
    }
    TaskStream stream = split_tasks(samples, C, config.tasks, config.seed);
    if (config.few_shot_fraction < 1.0) stream = subsample_fraction(stream, config.few_shot_fraction, config.seed);
    return stream;
}

TaskStream split_tasks(const std::vector<Sample>& samples, std::size_t num_classes, std::size_t num_tasks,
                       std::uint64_t seed) {
    if (num_tasks == 0) throw std::invalid_argument("split_tasks: num_tasks must be > 0");
    if (num_classes % num_tasks != 0)
        throw std::invalid_argument("split_tasks: " + std::to_string(num_classes) + " classes do not divide into " +
                                    std::to_string(num_tasks) + " tasks");
    RngStream root(seed);
    RngStream class_rng = root.fork(0xC1A55);
    const auto order = rng_permutation(class_rng, num_classes);
    const std::size_t per_task = num_classes / num_tasks;
    std::vector<Task> tasks(num_tasks);
    std::vector<std::size_t> task_of(num_classes);
    for (std::size_t t = 0; t < num_tasks; ++t) {
        for (std::size_t i = 0; i < per_task; ++i) {
            const std::size_t c = order[t * per_task + i];
            tasks[t].classes.push_back(c);
            task_of[c] = t;
        }
    }
    std::vector<bool> is_train(samples.size(), false);
    for (const auto& [label, idx] : indices_by_class(samples)) {
        if (label >= num_classes) throw std::invalid_argument("split_tasks: label out of range");
        RngStream split_rng = root.fork(0x5F117 + label);
        auto shuffled = idx;
        split_rng.shuffle(shuffled);
        const auto n_train = static_cast<std::size_t>(std::llround(kTrainShare * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < n_train; ++i) is_train[shuffled[i]] = true;
        Task& task = tasks[task_of[label]];
        for (std::size_t i : idx) {
            Sample s = samples[i];
            s.task = task_of[label];
            (is_train[i] ? task.train : task.test).push_back(std::move(s));
        }
    }
    return TaskStream(std::move(tasks), num_classes);
}

TaskStream subsample_fraction(const TaskStream& stream, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subsample_fraction: fraction must be in (0, 1]");
    RngStream root = RngStream(seed).fork(0xF5AC);
    std::vector<Task> tasks = stream.tasks();
    for (auto& task : tasks) {
        std::vector<bool> keep(task.train.size(), false);
        for (const auto& [label, idx] : indices_by_class(task.train)) {
            RngStream rng = root.fork(label);
            auto order = idx;
            rng.shuffle(order);
            const std::size_t n_keep = ceil_count(fraction, idx.size());
            for (std::size_t i = 0; i < n_keep; ++i) keep[order[i]] = true;
        }
        std::vector<Sample> kept;
        for (std::size_t i = 0; i < task.train.size(); ++i)
            if (keep[i]) kept.push_back(std::move(task.train[i]));
        task.train = std::move(kept);
    }
    return TaskStream(std::move(tasks), stream.num_classes());
}

std::string encode_dataset(const Dataset& ds) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(ds.samples.size()));
    put_u32(out, static_cast<std::uint32_t>(ds.tokens));
    put_u32(out, static_cast<std::uint32_t>(ds.input_dim));
    put_u32(out, static_cast<std::uint32_t>(ds.num_classes));
    for (const auto& s : ds.samples) {
        if (s.tokens.rows() != ds.tokens || s.tokens.cols() != ds.input_dim)
            throw std::invalid_argument("encode_dataset: sample shape does not match header");
        if (s.label >= ds.num_classes) throw std::invalid_argument("encode_dataset: label out of range");
        put_u32(out, static_cast<std::uint32_t>(s.label));
        for (double v : s.tokens.data()) put_f32(out, static_cast<float>(v));
    }
    return out;
}

Dataset decode_dataset(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw DatasetFormatError("bad magic: not an RWFD dataset");
    Reader r(bytes, "dataset");
    r.skip(4);
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) throw DatasetFormatError("unsupported dataset version " + std::to_string(version));
    Dataset ds;
    const std::uint32_t count = r.u32("sample count");
    ds.tokens = r.u32("token count");
    ds.input_dim = r.u32("input dim");
    ds.num_classes = r.u32("class count");
    const std::size_t remaining = bytes.size() - r.pos();
    if (ds.tokens != 0 && ds.input_dim > (std::numeric_limits<std::uint32_t>::max() / 4) / ds.tokens)
        throw DatasetFormatError("dataset header declares oversized records");
    const std::size_t record = 4 + 4 * ds.tokens * ds.input_dim;
    if (remaining % record != 0 || remaining / record != count)
        throw DatasetFormatError("dataset size mismatch: header promises " + std::to_string(count) + " records of " +
                                 std::to_string(record) + " bytes, file holds " + std::to_string(remaining));
    ds.samples.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Sample s;
        s.label = r.u32("label");
        if (s.label >= ds.num_classes)
            throw DatasetFormatError("record " + std::to_string(i) + ": label " + std::to_string(s.label) +
                                     " out of range");
        s.tokens = Matrix(ds.tokens, ds.input_dim);
        for (double& v : s.tokens.data()) {
            v = static_cast<double>(r.f32("token data"));
            if (!std::isfinite(v)) throw DatasetFormatError("record " + std::to_string(i) + ": non-finite value");
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    const std::string bytes = encode_dataset(ds);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open dataset " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_dataset(bytes);
}

std::string partition_json(const TaskStream& stream) {
    nlohmann::json j;
    j["version"] = 1;
    j["num_classes"] = stream.num_classes();
    j["tasks"] = nlohmann::json::array();
    for (const auto& t : stream.tasks()) j["tasks"].push_back(t.classes);
    return j.dump();
}

std::string serialize_stream(const TaskStream& stream) {
    Dataset ds;
    ds.num_classes = stream.num_classes();
    for (const auto& t : stream.tasks()) {
        for (const auto* split : {&t.train, &t.test}) {
            for (const auto& s : *split) {
                ds.tokens = s.tokens.rows();
                ds.input_dim = s.tokens.cols();
                ds.samples.push_back(s);
            }
        }
    }
    return encode_dataset(ds) + partition_json(stream);
}

}  // namespace rwf::stream
