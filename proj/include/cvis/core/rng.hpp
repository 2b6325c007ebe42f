#pragma once

#include <cstdint>
#include <random>

namespace cvis {

namespace detail {

// SplitMix64 finalizer; spreads nearby (seed, stream) pairs across the state space.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed sequence filling the engine state from a SplitMix64 walk.
struct SplitMixSeq {
    using result_type = std::uint32_t;

    std::uint64_t state;

    template <class It>
    void generate(It first, It last) {
        for (; first != last; ++first) {
            state += 0x9e3779b97f4a7c15ULL;
            *first = static_cast<std::uint32_t>(mix64(state) >> 32);
        }
    }
};

} // namespace detail

/// A reproducible random stream identified by (seed, stream_id).
///
/// Streams are single-owner. Parallel work gets its own stream through
/// `split`, never by sharing one engine across threads.
class RngStream {
public:
    using engine_type = std::mt19937_64;

    RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {
        const std::uint64_t a = detail::mix64(seed);
        const std::uint64_t b = detail::mix64(stream_id ^ 0x5851f42d4c957f2dULL);
        detail::SplitMixSeq seq{a ^ (b * 0xbf58476d1ce4e5b9ULL)};
        engine_.seed(seq);
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Child stream for sub-task `child` (batch, replication, level ...).
    [[nodiscard]] RngStream split(std::uint64_t child) const {
        return RngStream(seed_, detail::mix64(stream_id_ * 0x9e3779b97f4a7c15ULL + detail::mix64(child + 1)));
    }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    engine_type& engine() noexcept { return engine_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    engine_type engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace cvis
