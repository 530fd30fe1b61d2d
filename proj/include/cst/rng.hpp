#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cst {

/**
 * Counter-based SplitMix64 stream.
 *
 * Draw i of stream (seed, stream_id) is mix64(key + (i + 1) * gamma) with the
 * key derived from both ids, so the sequence depends only on integer
 * arithmetic and is identical on every platform. Distinct stream ids give
 * independent-looking streams for parallel trials.
 */
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();
    bool bernoulli(double p) { return uniform() < p; }
    /// +1 or -1 with equal probability.
    int sign() { return (next_u64() >> 63) ? 1 : -1; }
    /// Index drawn with probability proportional to weights[i].
    std::size_t categorical(std::span<const double> weights);

    template <class T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    /// Child stream keyed by this stream's seed and a derived id.
    RngStream split(std::uint64_t child_id) const;

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace cst
