#include "emoe/engine.hpp"

#include <cmath>
#include <stdexcept>

#include "emoe/math_ops.hpp"

namespace emoe {

std::string to_string(UncertaintySpace space) {
    switch (space) {
        case UncertaintySpace::mid_post: return "mid_post";
        case UncertaintySpace::mid_pre: return "mid_pre";
        case UncertaintySpace::z_next: return "z_next";
    }
    throw std::invalid_argument("to_string: bad UncertaintySpace");
}

UncertaintySpace uncertainty_space_from_string(const std::string& name) {
    if (name == "mid_post") return UncertaintySpace::mid_post;
    if (name == "mid_pre") return UncertaintySpace::mid_pre;
    if (name == "z_next") return UncertaintySpace::z_next;
    throw std::invalid_argument("unknown uncertainty space \"" + name + "\"");
}

const UncertaintyEstimate& SeparationEstimates::get(UncertaintySpace space) const {
    switch (space) {
        case UncertaintySpace::mid_post: return mid_post;
        case UncertaintySpace::mid_pre: return mid_pre;
        case UncertaintySpace::z_next: return z_next;
    }
    throw std::invalid_argument("SeparationEstimates::get: bad space");
}

void ExpertBundle::validate() const {
    weights.validate();
    if (schedule.steps != weights.geom.timesteps)
        throw std::invalid_argument("ExpertBundle: schedule length differs from geometry");
    if (descriptors.size() != weights.num_experts())
        throw std::invalid_argument("ExpertBundle: descriptor count differs from expert count");
    if (top_n < 1 || top_n > weights.num_experts())
        throw std::invalid_argument("ExpertBundle: top_n out of [1, M]");
}

ExpertBundle subset_bundle(const ExpertBundle& bundle, const std::vector<std::size_t>& experts) {
    if (experts.empty()) throw std::invalid_argument("subset_bundle: empty subset");
    ExpertBundle out;
    out.schedule = bundle.schedule;
    out.top_n = std::min(bundle.top_n, experts.size());
    RngStream unused(0, 0);
    out.weights = init_unet(bundle.weights.geom, experts.size(), unused);
    {
        auto dst = parameter_list(out.weights, ParamScope::backbone_only);
        auto src = parameter_list(bundle.weights, ParamScope::backbone_only);
        for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
    }
    for (std::size_t i = 0; i < experts.size(); ++i) {
        if (experts[i] >= bundle.num_experts())
            throw std::invalid_argument("subset_bundle: expert index out of range");
        copy_expert(out.weights, i, bundle.weights, experts[i]);
        out.descriptors.push_back(bundle.descriptors[experts[i]]);
    }
    return out;
}

UncertaintyEstimate eu_from_members(const std::vector<Tensor>& members, UncertaintySpace space) {
    if (members.empty()) throw std::invalid_argument("eu_from_members: no members");
    auto [mean, var] = ensemble_mean_var(members);
    double eu = 0.0;
    for (std::size_t i = 0; i < var.size(); ++i) eu += var[i];
    eu /= static_cast<double>(var.size());
    UncertaintyEstimate est;
    est.eu = eu;
    est.d = var.size();
    est.reported = std::sqrt(static_cast<double>(var.size())) * eu;
    est.space = space;
    return est;
}

LatentState encode(const Tensor& image) { return LatentState{image, 0}; }

Tensor decode(const LatentState& z0) {
    if (z0.t != 0)
        throw std::invalid_argument("decode: latent is at t=" + std::to_string(z0.t) +
                                    ", expected t=0");
    return z0.z;
}

RngStream prompt_stream(std::uint64_t seed, const Prompt& prompt) {
    return RngStream(seed, fnv1a64(prompt.text));
}

EmoeEngine::EmoeEngine(ExpertBundle bundle) : bundle_(std::move(bundle)) { bundle_.validate(); }

Tensor EmoeEngine::draw_z_start(const Prompt& prompt, std::uint64_t seed) const {
    RngStream stream = prompt_stream(seed, prompt);
    const auto& g = bundle_.weights.geom;
    return gaussian(stream, {g.latent_c, g.latent_h, g.latent_w});
}

GateWeights EmoeEngine::gates_for(const Prompt& prompt) const {
    return compute_gate_weights(prompt, bundle_.descriptors, bundle_.top_n,
                                bundle_.weights.geom.d_txt);
}

EmoeEngine::SeparationOutput EmoeEngine::separate_at(const Tensor& z, int t,
                                                     const PromptEmbedding& ctx,
                                                     const GateWeights& gates) const {
    SeparationOutput out;
    out.z_top = z;
    out.t = t;
    out.paths = unet_forward_separate(bundle_.weights, z, t, ctx, gates);
    forward_passes_.fetch_add(1);

    std::vector<Tensor> post, pre, znext;
    post.reserve(out.paths.size());
    pre.reserve(out.paths.size());
    znext.reserve(out.paths.size());
    for (const auto& p : out.paths) {
        post.push_back(p.mid.post);
        pre.push_back(p.mid.pre);
        znext.push_back(ddim_step({z, t}, p.eps, bundle_.schedule).z);
    }
    out.estimates.mid_post = eu_from_members(post, UncertaintySpace::mid_post);
    out.estimates.mid_pre = eu_from_members(pre, UncertaintySpace::mid_pre);
    out.estimates.z_next = eu_from_members(znext, UncertaintySpace::z_next);
    return out;
}

UncertaintyEstimate EmoeEngine::estimate_uncertainty(const Prompt& prompt, std::uint64_t seed,
                                                     UncertaintySpace space) const {
    return estimate_all_spaces(prompt, seed).get(space);
}

SeparationEstimates EmoeEngine::estimate_all_spaces(const Prompt& prompt,
                                                    std::uint64_t seed) const {
    Tensor z_top = draw_z_start(prompt, seed);
    PromptEmbedding ctx = embed_prompt(prompt, bundle_.weights.geom.d_txt);
    return separate_at(z_top, bundle_.schedule.steps, ctx, gates_for(prompt)).estimates;
}

SeparationEstimates EmoeEngine::estimate_at_step(const Prompt& prompt, std::uint64_t seed,
                                                 int separation_t) const {
    if (separation_t < 1 || separation_t > bundle_.schedule.steps)
        throw std::invalid_argument("estimate_at_step: separation step out of [1, T]");
    PromptEmbedding ctx = embed_prompt(prompt, bundle_.weights.geom.d_txt);
    GateWeights gates = gates_for(prompt);
    Tensor z = draw_z_start(prompt, seed);
    for (int t = bundle_.schedule.steps; t > separation_t; --t) {
        UNetOutput out = unet_forward(bundle_.weights, z, t, ctx, gates);
        forward_passes_.fetch_add(1);
        z = ddim_step({std::move(z), t}, out.eps, bundle_.schedule).z;
    }
    return separate_at(z, separation_t, ctx, gates).estimates;
}

std::vector<SeparationEstimates> EmoeEngine::estimate_per_step_series(const Prompt& prompt,
                                                                      std::uint64_t seed) const {
    PromptEmbedding ctx = embed_prompt(prompt, bundle_.weights.geom.d_txt);
    GateWeights gates = gates_for(prompt);
    Tensor z = draw_z_start(prompt, seed);
    std::vector<SeparationEstimates> series;
    series.reserve(static_cast<std::size_t>(bundle_.schedule.steps));
    for (int t = bundle_.schedule.steps; t >= 1; --t) {
        series.push_back(separate_at(z, t, ctx, gates).estimates);
        if (t > 1) {
            UNetOutput out = unet_forward(bundle_.weights, z, t, ctx, gates);
            forward_passes_.fetch_add(1);
            z = ddim_step({std::move(z), t}, out.eps, bundle_.schedule).z;
        }
    }
    return series;
}

EmoeResult EmoeEngine::emoe_rollout(const Prompt& prompt, std::uint64_t seed, int steps) const {
    if (steps != bundle_.schedule.steps)
        throw std::invalid_argument("emoe_rollout: steps must equal the schedule length");
    PromptEmbedding ctx = embed_prompt(prompt, bundle_.weights.geom.d_txt);
    GateWeights gates = gates_for(prompt);
    Tensor z_top = draw_z_start(prompt, seed);
    SeparationOutput sep = separate_at(z_top, steps, ctx, gates);

    EmoeResult result;
    result.estimate = sep.estimates.mid_post;
    for (const auto& p : sep.paths) result.per_path_eps.push_back(p.eps);

    for (std::size_t i = 0; i < sep.paths.size(); ++i) {
        LatentState state = ddim_step({z_top, steps}, sep.paths[i].eps, bundle_.schedule);
        while (state.t > 0) {
            UNetOutput out = unet_forward(bundle_.weights, state.z, state.t, ctx, gates);
            forward_passes_.fetch_add(1);
            state = ddim_step(state, out.eps, bundle_.schedule);
        }
        result.latents.push_back(std::move(state));
    }
    return result;
}

LatentState EmoeEngine::aggregate_rollout_from(Tensor z_start, int t_start,
                                               const PromptEmbedding& ctx,
                                               const GateWeights& gates) const {
    LatentState state{std::move(z_start), t_start};
    while (state.t > 0) {
        UNetOutput out = unet_forward(bundle_.weights, state.z, state.t, ctx, gates);
        forward_passes_.fetch_add(1);
        state = ddim_step(state, out.eps, bundle_.schedule);
    }
    return state;
}

std::pair<UncertaintyEstimate, std::optional<LatentState>> EmoeEngine::fast_emoe(
    const Prompt& prompt, std::uint64_t seed, std::optional<double> threshold) const {
    PromptEmbedding ctx = embed_prompt(prompt, bundle_.weights.geom.d_txt);
    GateWeights gates = gates_for(prompt);
    Tensor z_top = draw_z_start(prompt, seed);
    SeparationOutput sep = separate_at(z_top, bundle_.schedule.steps, ctx, gates);
    UncertaintyEstimate est = sep.estimates.mid_post;
    if (threshold && est.reported >= *threshold) return {est, std::nullopt};
    // uncertainty acceptable: the unnecessary computational paths are dropped
    // and one standard aggregate rollout continues from the same z_T
    return {est, aggregate_rollout_from(std::move(z_top), bundle_.schedule.steps, ctx, gates)};
}

LatentState EmoeEngine::sample_aggregate(const Prompt& prompt, std::uint64_t seed) const {
    PromptEmbedding ctx = embed_prompt(prompt, bundle_.weights.geom.d_txt);
    return aggregate_rollout_from(draw_z_start(prompt, seed), bundle_.schedule.steps, ctx,
                                  gates_for(prompt));
}

}  // namespace emoe
