#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace complift {

// One reproducible random stream. Streams are derived from (seed, stream id)
// so per-sample streams do not depend on how samples are batched or split
// across threads.
class rng_stream {
public:
    explicit rng_stream(std::uint64_t seed = 0, std::uint64_t stream = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x9e3779b9u};
        engine_.seed(seq);
    }

    double normal() {
        ++normal_draws_;
        return normal_(engine_);
    }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        ++int_draws_;
        return std::uniform_int_distribution<int>(lo, hi)(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }

    std::uint64_t normal_draws() const noexcept { return normal_draws_; }
    std::uint64_t int_draws() const noexcept { return int_draws_; }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
    std::uint64_t normal_draws_ = 0;
    std::uint64_t int_draws_ = 0;
};

inline std::vector<rng_stream> make_streams(std::uint64_t seed, std::size_t count, std::uint64_t first = 0) {
    std::vector<rng_stream> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.emplace_back(seed, first + i);
    return out;
}

}  // namespace complift
