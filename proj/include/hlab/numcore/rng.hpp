#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace hlab {

// Seeded random stream. Draws are produced from std::mt19937_64 with
// hand-rolled distributions so sequences are identical across standard
// library implementations.
class RngStream {
   public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    // Index drawn proportionally to non-negative weights.
    std::size_t categorical(std::span<const double> weights);

    // Independent child stream keyed by an extra identifier.
    RngStream fork(std::uint64_t key) const;

   private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace hlab
