#pragma once

#include <cstdint>
#include <vector>

#include "emoe/tensor.hpp"

namespace emoe {

// Counter-based deterministic random stream. The sample sequence is a pure
// function of (root_seed, stream_id, counter), so independent streams can be
// handed out per prompt / per worker without shared mutable state.
struct RngStream {
    std::uint64_t root_seed = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t root, std::uint64_t stream) : root_seed(root), stream_id(stream) {}

    std::uint64_t next_u64();

    // uniform in (0, 1]
    double next_uniform();

    // standard normal via Box-Muller; consumes two counter slots per draw
    double next_gaussian();

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n);
};

// 64-bit finalizer (splitmix64); also used as a general integer mixer.
std::uint64_t mix64(std::uint64_t x);

// FNV-1a over a byte string; stable across platforms.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);

// i.i.d. standard-normal tensor of the given shape, advancing `stream`.
Tensor gaussian(RngStream& stream, const std::vector<std::size_t>& shape);

}  // namespace emoe
