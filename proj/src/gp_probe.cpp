#include "emoe/gp_probe.hpp"

#include <cmath>
#include <stdexcept>

#include "emoe/rng.hpp"

namespace emoe {

namespace {

constexpr std::uint64_t kGpStream = 0x06;
constexpr std::size_t kInputDim = 4;
constexpr std::size_t kHiddenDim = 8;

// fixed probe input
const double kProbeInput[kInputDim] = {0.3, -0.7, 0.5, 0.1};

// one random tanh network: f(y) = sum_j a_j tanh(w_j . y + b_j) / sqrt(H)
double sample_network_output(RngStream& stream) {
    double out = 0.0;
    double scale = 1.0 / std::sqrt(static_cast<double>(kHiddenDim));
    for (std::size_t j = 0; j < kHiddenDim; ++j) {
        double pre = 0.0;
        for (std::size_t i = 0; i < kInputDim; ++i)
            pre += stream.next_gaussian() * kProbeInput[i];
        pre += stream.next_gaussian();  // bias
        out += stream.next_gaussian() * std::tanh(pre) * scale;
    }
    return out;
}

}  // namespace

GpProbeResult gp_convergence_probe(const std::vector<std::size_t>& ensemble_sizes,
                                   std::uint64_t seed) {
    if (ensemble_sizes.empty())
        throw std::invalid_argument("gp_convergence_probe: no ensemble sizes");
    for (std::size_t n : ensemble_sizes) {
        if (n < 2) throw std::invalid_argument("gp_convergence_probe: ensemble sizes must be >= 2");
        if (n > kGpReferenceSize)
            throw std::invalid_argument("gp_convergence_probe: size exceeds the reference pool");
    }

    RngStream stream(seed, kGpStream);
    std::vector<double> pool(kGpReferenceSize);
    for (auto& v : pool) v = sample_network_output(stream);

    GpProbeResult result;
    result.reference_size = kGpReferenceSize;
    double sum = 0.0;
    for (double v : pool) sum += v;
    result.reference_mean = sum / static_cast<double>(pool.size());
    double var = 0.0;
    for (double v : pool) var += (v - result.reference_mean) * (v - result.reference_mean);
    result.reference_var = var / static_cast<double>(pool.size());

    for (std::size_t n : ensemble_sizes) {
        GpProbeRow row;
        row.ensemble_size = n;
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += pool[i];
        row.ensemble_mean = s / static_cast<double>(n);
        row.mean_abs_error = std::fabs(row.ensemble_mean - result.reference_mean);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            v += (pool[i] - row.ensemble_mean) * (pool[i] - row.ensemble_mean);
        row.var_estimate = v / static_cast<double>(n);
        row.var_rel_error = std::fabs(row.var_estimate - result.reference_var) /
                            result.reference_var;
        result.rows.push_back(row);
    }
    return result;
}

}  // namespace emoe
