#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emoe/diffusion.hpp"
#include "emoe/text_encoder.hpp"
#include "emoe/unet.hpp"

namespace emoe {

// Latent space the ensemble variance is measured in. mid_post is the
// default; mid_pre and z_next exist for the latent-space ablation.
enum class UncertaintySpace { mid_post, mid_pre, z_next };

std::string to_string(UncertaintySpace space);
UncertaintySpace uncertainty_space_from_string(const std::string& name);

struct UncertaintyEstimate {
    double eu = 0.0;        // mean over dimensions of the inter-expert variance
    double reported = 0.0;  // sqrt(d) * eu, the scale every experiment reports
    UncertaintySpace space = UncertaintySpace::mid_post;
    std::size_t d = 0;
};

// All three space estimates, computed from one separation pass.
struct SeparationEstimates {
    UncertaintyEstimate mid_post;
    UncertaintyEstimate mid_pre;
    UncertaintyEstimate z_next;

    const UncertaintyEstimate& get(UncertaintySpace space) const;
};

struct ExpertBundle {
    UNetWeights weights;
    NoiseSchedule schedule;
    std::vector<ExpertDescriptor> descriptors;
    std::size_t top_n = 2;

    std::size_t num_experts() const { return weights.num_experts(); }
    void validate() const;
};

// Restriction of a bundle to a subset of its experts (for the ensemble-size
// ablation); expert checkpoints stay untouched on disk.
ExpertBundle subset_bundle(const ExpertBundle& bundle, const std::vector<std::size_t>& experts);

struct EmoeResult {
    UncertaintyEstimate estimate;
    std::vector<LatentState> latents;  // exactly M final z_0^i
    std::vector<Tensor> per_path_eps;  // first-step predictions, diagnostics
};

// The inter-expert variance estimator: mean over dimensions of the
// population variance across members, reported as sqrt(d) * eu. Exposed so
// tests can inject synthetic mid latents directly.
UncertaintyEstimate eu_from_members(const std::vector<Tensor>& members, UncertaintySpace space);

// Per-prompt stream under a root seed: stream_id is the hash of the prompt
// text, so scoring parallelizes without shared state and the same text gets
// the same starting noise in every language.
RngStream prompt_stream(std::uint64_t seed, const Prompt& prompt);

// Identity codec standing in for the autoencoder pair.
LatentState encode(const Tensor& image);
Tensor decode(const LatentState& z0);  // requires t == 0

class EmoeEngine {
public:
    explicit EmoeEngine(ExpertBundle bundle);

    const ExpertBundle& bundle() const { return bundle_; }

    // Zero-shot estimate from the first denoising step; no further
    // denoising is performed.
    UncertaintyEstimate estimate_uncertainty(const Prompt& prompt, std::uint64_t seed,
                                             UncertaintySpace space) const;
    SeparationEstimates estimate_all_spaces(const Prompt& prompt, std::uint64_t seed) const;

    // Denoising-step ablation: aggregate DDIM down to t = separation_t,
    // then separate the experts there.
    SeparationEstimates estimate_at_step(const Prompt& prompt, std::uint64_t seed,
                                         int separation_t) const;

    // One aggregate trajectory, one separation pass per step: estimates for
    // every t = T..1.
    std::vector<SeparationEstimates> estimate_per_step_series(const Prompt& prompt,
                                                              std::uint64_t seed) const;

    // Expert separation at t = T, then M independent aggregate DDIM paths
    // down to t = 0. `steps` must equal the schedule length.
    EmoeResult emoe_rollout(const Prompt& prompt, std::uint64_t seed, int steps) const;

    // EU from the first step; halt if reported >= threshold, otherwise one
    // standard aggregate rollout from the same z_T.
    std::pair<UncertaintyEstimate, std::optional<LatentState>> fast_emoe(
        const Prompt& prompt, std::uint64_t seed, std::optional<double> threshold) const;

    // Plain aggregate MoE sampler (no separation anywhere).
    LatentState sample_aggregate(const Prompt& prompt, std::uint64_t seed) const;

    // Instrumentation: U-Net invocations (a separation pass counts once).
    std::uint64_t forward_pass_count() const { return forward_passes_.load(); }
    void reset_forward_pass_count() const { forward_passes_.store(0); }

private:
    struct SeparationOutput {
        Tensor z_top;  // the latent the separation ran on
        int t = 0;
        std::vector<UNetOutput> paths;
        SeparationEstimates estimates;
    };

    Tensor draw_z_start(const Prompt& prompt, std::uint64_t seed) const;
    GateWeights gates_for(const Prompt& prompt) const;
    SeparationOutput separate_at(const Tensor& z, int t, const PromptEmbedding& ctx,
                                 const GateWeights& gates) const;
    LatentState aggregate_rollout_from(Tensor z_start, int t_start, const PromptEmbedding& ctx,
                                       const GateWeights& gates) const;

    ExpertBundle bundle_;
    mutable std::atomic<std::uint64_t> forward_passes_{0};
};

}  // namespace emoe
