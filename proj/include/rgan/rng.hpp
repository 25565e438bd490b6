#pragma once

#include <cstdint>
#include <string_view>

namespace rgan {

/// 64-bit FNV-1a hash, used to turn purpose strings and parameter names into seed material.
std::uint64_t fnv1a64(std::string_view text);

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t z);

/// Derives an independent stream key from a base seed, a purpose tag, and an index.
/// Streams keyed by (phantom_id, purpose) never shift when other streams are added.
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0);

/// Counter-based generator: the n-th output is mix64(key + n * golden_gamma),
/// i.e. SplitMix64 with an explicit counter. Output is a pure function of (key, n).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    /// Standard normal via Box-Muller (one output per two uniforms).
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace rgan
