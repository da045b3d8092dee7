#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "rwf/backbone.hpp"
#include "rwf/training.hpp"

namespace rwf::checkpoint {

// Container layout (all integers little-endian u32 unless noted):
//
//   "RWFC" version header_len header_json
//   param_count { name_len name rows cols f32[rows*cols] }*
//   optional: "ADAM" state_len state_json
//             entry_count { name_len name rows cols f32[first] f32[second] }*
//
// header_json holds the model config plus the stream-derived shape fields;
// state_json holds the Adam hyper-parameters, step and samples_seen.
inline constexpr std::uint32_t kVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    backbone::Model model;
    std::optional<training::OptState> opt;
};

std::string encode(const backbone::Model& model, const training::OptState* opt = nullptr);
// Throws CheckpointError on any structural mismatch or truncation.
Checkpoint decode(const std::string& bytes);

void write(const std::filesystem::path& path, const backbone::Model& model, const training::OptState* opt = nullptr);
Checkpoint read(const std::filesystem::path& path);

}  // namespace rwf::checkpoint
