#pragma once

#include <cstdint>
#include <vector>

namespace emoe {

// Ensemble-convergence probe: N small random networks drawn from a fixed
// weight distribution, compared against a 10^4-member reference. The
// ensemble mean should approach the reference mean at the CLT rate and the
// (population) variance estimate should approach the reference variance.
struct GpProbeRow {
    std::size_t ensemble_size = 0;
    double ensemble_mean = 0.0;
    double mean_abs_error = 0.0;  // |ensemble mean - reference mean|
    double var_estimate = 0.0;
    double var_rel_error = 0.0;  // |var_estimate - reference var| / reference var
};

struct GpProbeResult {
    std::size_t reference_size = 0;
    double reference_mean = 0.0;
    double reference_var = 0.0;
    std::vector<GpProbeRow> rows;
};

inline constexpr std::size_t kGpReferenceSize = 10000;

// Ensembles are prefixes of the reference pool, so an N equal to the
// reference size reproduces it exactly (zero errors).
GpProbeResult gp_convergence_probe(const std::vector<std::size_t>& ensemble_sizes,
                                   std::uint64_t seed);

}  // namespace emoe
