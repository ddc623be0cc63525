#pragma once

#include <cstddef>
#include <vector>

#include "emoe/rng.hpp"
#include "emoe/tensor.hpp"
#include "emoe/text_encoder.hpp"

namespace emoe {

// Toy U-Net geometry. The latent C x H x W is patch-merged (2x2) to a
// (H/2 x W/2) token grid at d_model, merged again (2x2) to the mid grid,
// mirrored back up. H and W must be divisible by 4.
struct UNetGeometry {
    std::size_t latent_c = 2;
    std::size_t latent_h = 8;
    std::size_t latent_w = 8;
    std::size_t d_model = 8;
    std::size_t d_attn = 8;
    std::size_t d_txt = 16;
    std::size_t d_ff = 16;
    std::size_t mid_hidden = 16;
    int timesteps = 25;

    std::size_t down_h() const { return latent_h / 2; }
    std::size_t down_w() const { return latent_w / 2; }
    std::size_t n_down_tokens() const { return down_h() * down_w(); }
    std::size_t patch_dim() const { return latent_c * 4; }
    std::size_t mid_h() const { return down_h() / 2; }
    std::size_t mid_w() const { return down_w() / 2; }
    std::size_t n_mid_tokens() const { return mid_h() * mid_w(); }
    std::size_t merge2_dim() const { return 4 * d_model; }
    std::size_t d_mid() const { return d_model * n_mid_tokens(); }

    void validate() const;
    bool operator==(const UNetGeometry&) const = default;
};

// One expert's projections at one cross-attention layer.
// w_q: d_attn x d_model, w_k / w_v: d_attn x d_txt.
struct CrossAttentionWeights {
    Tensor w_q;
    Tensor w_k;
    Tensor w_v;
};

// One expert's two-layer tanh MLP at one feed-forward layer.
struct FeedForwardWeights {
    Tensor w1;  // d_ff x d_model
    Tensor b1;  // d_ff
    Tensor w2;  // d_model x d_ff
    Tensor b2;  // d_model
};

// Sparse MoE layers carry exactly M expert weight sets each.
struct MoeCaLayer {
    std::vector<CrossAttentionWeights> experts;
    bool is_separation = false;
};

struct MoeFfLayer {
    std::vector<FeedForwardWeights> experts;
};

struct BackboneWeights {
    Tensor w_in;    // d_model x patch_dim
    Tensor b_in;    // d_model
    Tensor t_emb;   // T x d_model, additive per-timestep embedding
    Tensor w_mid;   // d_model x merge2_dim
    Tensor b_mid;   // d_model
    Tensor mid_w1;  // mid_hidden x d_model
    Tensor mid_b1;  // mid_hidden
    Tensor mid_w2;  // d_model x mid_hidden
    Tensor mid_b2;  // d_model
    Tensor w_up;    // merge2_dim x d_model
    Tensor b_up;    // merge2_dim
    Tensor w_out;   // patch_dim x d_model
    Tensor b_out;   // patch_dim
};

struct UNetWeights {
    UNetGeometry geom;
    BackboneWeights backbone;
    MoeCaLayer down_ca;  // the designated separation layer
    MoeFfLayer down_ff;
    MoeCaLayer mid_ca;
    MoeFfLayer up_ff;
    MoeCaLayer up_ca;

    std::size_t num_experts() const { return down_ca.experts.size(); }
    void validate() const;
};

// Gradients share the weight layout; zeros_like() builds an empty set.
using UNetGradients = UNetWeights;

// Top-n selection S plus softmax weights over the selected scores.
// Unselected experts carry implicit weight zero.
struct GateWeights {
    std::vector<std::size_t> selected;  // ascending expert indices, |S| = n
    std::vector<double> weights;        // aligned with selected, sums to 1
    std::size_t num_experts = 0;

    void validate() const;
};

GateWeights one_hot_gate(std::size_t expert, std::size_t num_experts);

// Training-free gating: alpha_i = gate_vector(psi_i) . [pooled(y); pooled(neg)],
// S = indices of the n largest alpha (ties to the lower index), weights =
// softmax over the selected alphas. The negative prompt defaults to the
// canonical null token.
GateWeights compute_gate_weights(const Prompt& prompt,
                                 const std::vector<ExpertDescriptor>& descriptors, std::size_t n,
                                 std::size_t d_txt);
GateWeights compute_gate_weights(const Prompt& positive_prompt, const Prompt& negative_prompt,
                                 const std::vector<ExpertDescriptor>& descriptors, std::size_t n,
                                 std::size_t d_txt);

enum class CaMode { aggregate, separate };

// Sparse MoE cross-attention. Aggregate mode sums the selected experts'
// projections (one attention call, residual added) and returns a single
// tensor. Separate mode runs every expert's own attention path (ignoring S)
// and is only legal at the designated separation layer.
std::vector<Tensor> moe_cross_attention(const Tensor& x, const PromptEmbedding& ctx,
                                        const MoeCaLayer& layer, const GateWeights& gates,
                                        CaMode mode);

// Per-expert MLP outputs combined by sum_{i in S} w_i f_i(x), residual added.
Tensor moe_feed_forward(const Tensor& x, const MoeFfLayer& layer, const GateWeights& gates);

// Mid-block latents in C_mid x H_mid x W_mid layout.
struct MidLatent {
    Tensor pre;
    Tensor post;
};

struct UNetOutput {
    Tensor eps;  // C x H x W noise prediction
    MidLatent mid;
};

// Aggregate forward pass: one eps-prediction and one mid latent pair.
UNetOutput unet_forward(const UNetWeights& weights, const Tensor& z, int t,
                        const PromptEmbedding& ctx, const GateWeights& gates);

// Expert separation at the first cross-attention of the down-block: M
// independent paths, each running all later MoE layers in aggregate mode.
std::vector<UNetOutput> unet_forward_separate(const UNetWeights& weights, const Tensor& z, int t,
                                              const PromptEmbedding& ctx,
                                              const GateWeights& gates);

// Intermediate activations kept for the hand-derived backward pass
// (aggregate mode only; training never separates).
struct ForwardCache;

UNetOutput unet_forward_cached(const UNetWeights& weights, const Tensor& z, int t,
                               const PromptEmbedding& ctx, const GateWeights& gates,
                               ForwardCache& cache);

UNetGradients zeros_like(const UNetWeights& weights);

// Backpropagates d_eps (gradient w.r.t. the eps prediction) through the
// cached forward pass, accumulating into `grads`.
void unet_backward(const UNetWeights& weights, const ForwardCache& cache, const Tensor& d_eps,
                   UNetGradients& grads);

enum class ParamScope { backbone_only, expert_only };

// Parameter tensors in the fixed documented order used by checkpoints,
// SGD updates and finite-difference sweeps. For expert_only the order is
// down_ca(q,k,v), mid_ca(q,k,v), up_ca(q,k,v), down_ff(w1,b1,w2,b2),
// up_ff(w1,b1,w2,b2); backbone follows the declaration order above.
std::vector<Tensor*> parameter_list(UNetWeights& weights, ParamScope scope,
                                    std::size_t expert_index = 0);
std::vector<const Tensor*> parameter_list(const UNetWeights& weights, ParamScope scope,
                                          std::size_t expert_index = 0);

// Gaussian init scaled by 1/sqrt(fan_in); biases and the timestep table zero.
UNetWeights init_unet(const UNetGeometry& geom, std::size_t num_experts, RngStream& stream);

// Re-draws expert i's conditioning weights from `stream`.
void reinit_expert(UNetWeights& weights, std::size_t expert_index, RngStream& stream);

// Copies expert src_index of `src` into expert dst_index of `dst`.
void copy_expert(UNetWeights& dst, std::size_t dst_index, const UNetWeights& src,
                 std::size_t src_index);

struct ForwardCache {
    int t = 0;
    GateWeights gates;
    Tensor ctx_tokens;
    Tensor patches;  // n_down x patch_dim
    Tensor x0;       // tokens after input projection + timestep add
    // cross-attention caches (down, mid, up)
    struct CaCache {
        Tensor input;
        Tensor q, k, v;
        Tensor attn;  // row-stochastic weights
        Tensor wq_agg, wk_agg, wv_agg;
    };
    CaCache down_ca, mid_ca, up_ca;
    // feed-forward caches (down, up): per-expert tanh activations
    struct FfCache {
        Tensor input;
        std::vector<Tensor> hidden;  // tanh outputs per selected expert
    };
    FfCache down_ff, up_ff;
    Tensor x1, x2;
    Tensor grouped;  // n_mid x merge2_dim
    Tensor m0, m1, m2;
    Tensor mid_hidden;  // tanh outputs of the backbone mid MLP
    Tensor u0, u1, u2;
};

}  // namespace emoe
