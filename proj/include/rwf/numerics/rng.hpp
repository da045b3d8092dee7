#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "rwf/numerics/matrix.hpp"

namespace rwf {

// Counter-based generator (Philox4x32-10). A stream is identified by
// (seed, key); the n-th draw is a pure function of (seed, key, n), so
// sequences are reproducible on any platform and child streams can be
// derived without sharing state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t key = 0) noexcept : seed_(seed), key_(key) {}

    // Independent stream for a named sub-purpose.
    RngStream fork(std::uint64_t salt) const noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint32_t next_u32() noexcept;
    std::uint64_t next_u64() noexcept;
    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    // Uniform integer in [0, n); rejection sampling, no modulo bias.
    std::uint64_t uniform_index(std::uint64_t n);
    // Standard normal via Box-Muller.
    double normal() noexcept;

    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static std::array<std::uint32_t, 4> philox(std::array<std::uint32_t, 4> ctr,
                                                std::array<std::uint32_t, 2> key) noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    unsigned block_pos_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// i.i.d. N(0, std^2) entries.
Matrix rng_normal(RngStream& rng, std::size_t rows, std::size_t cols, double std);

// Random permutation of 0..n-1.
std::vector<std::size_t> rng_permutation(RngStream& rng, std::size_t n);

}  // namespace rwf
