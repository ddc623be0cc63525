#include "emoe/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace emoe {

std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t RngStream::next_u64() {
    // Two mixing rounds keyed by (root_seed, stream_id); the per-call state is
    // only the counter, so streams are trivially forkable and replayable.
    std::uint64_t key = mix64(root_seed ^ 0x632be59bd9b4e019ULL);
    key = mix64(key ^ mix64(stream_id ^ 0x9e3779b97f4a7c15ULL));
    return mix64(key + counter++ * 0xd1b54a32d192ed03ULL);
}

double RngStream::next_uniform() {
    // 53-bit mantissa, shifted into (0, 1]
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::next_gaussian() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::next_below: n == 0");
    // rejection sampling to avoid modulo bias
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

Tensor gaussian(RngStream& stream, const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw std::invalid_argument("gaussian: empty shape");
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = stream.next_gaussian();
    return t;
}

}  // namespace emoe
