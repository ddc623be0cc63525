#include "emoe/unet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "emoe/math_ops.hpp"

namespace emoe {

namespace {

void add_inplace(Tensor& y, const Tensor& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
}

void axpy(Tensor& y, double a, const Tensor& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// Y = X W^T + b
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul_nt(x, w);
    std::size_t n = y.dim(0), d = y.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) y.at(i, j) += b[j];
    return y;
}

void add_colsum(Tensor& acc, const Tensor& dy) {
    std::size_t n = dy.dim(0), d = dy.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) acc[j] += dy.at(i, j);
}

Tensor tanh_of(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

// latent C x H x W -> n_down x patch_dim, feature order (c, dy, dx)
Tensor extract_patches(const UNetGeometry& g, const Tensor& z) {
    Tensor p({g.n_down_tokens(), g.patch_dim()});
    for (std::size_t py = 0; py < g.down_h(); ++py)
        for (std::size_t px = 0; px < g.down_w(); ++px) {
            std::size_t tok = py * g.down_w() + px;
            for (std::size_t c = 0; c < g.latent_c; ++c)
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx)
                        p.at(tok, (c * 2 + dy) * 2 + dx) = z.at(c, 2 * py + dy, 2 * px + dx);
        }
    return p;
}

// inverse of extract_patches
Tensor scatter_patches(const UNetGeometry& g, const Tensor& y) {
    Tensor z({g.latent_c, g.latent_h, g.latent_w});
    for (std::size_t py = 0; py < g.down_h(); ++py)
        for (std::size_t px = 0; px < g.down_w(); ++px) {
            std::size_t tok = py * g.down_w() + px;
            for (std::size_t c = 0; c < g.latent_c; ++c)
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx)
                        z.at(c, 2 * py + dy, 2 * px + dx) = y.at(tok, (c * 2 + dy) * 2 + dx);
        }
    return z;
}

// down tokens -> n_mid x merge2_dim, feature order (dy, dx, channel)
Tensor gather_groups(const UNetGeometry& g, const Tensor& x) {
    Tensor out({g.n_mid_tokens(), g.merge2_dim()});
    for (std::size_t gy = 0; gy < g.mid_h(); ++gy)
        for (std::size_t gx = 0; gx < g.mid_w(); ++gx) {
            std::size_t tok = gy * g.mid_w() + gx;
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                    std::size_t src = (2 * gy + dy) * g.down_w() + (2 * gx + dx);
                    for (std::size_t m = 0; m < g.d_model; ++m)
                        out.at(tok, (dy * 2 + dx) * g.d_model + m) = x.at(src, m);
                }
        }
    return out;
}

// inverse of gather_groups
Tensor scatter_groups(const UNetGeometry& g, const Tensor& u) {
    Tensor out({g.n_down_tokens(), g.d_model});
    for (std::size_t gy = 0; gy < g.mid_h(); ++gy)
        for (std::size_t gx = 0; gx < g.mid_w(); ++gx) {
            std::size_t tok = gy * g.mid_w() + gx;
            for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) {
                    std::size_t dst = (2 * gy + dy) * g.down_w() + (2 * gx + dx);
                    for (std::size_t m = 0; m < g.d_model; ++m)
                        out.at(dst, m) = u.at(tok, (dy * 2 + dx) * g.d_model + m);
                }
        }
    return out;
}

// mid tokens (n_mid x d_model) -> C_mid x H_mid x W_mid
Tensor tokens_to_chw(const UNetGeometry& g, const Tensor& m) {
    Tensor out({g.d_model, g.mid_h(), g.mid_w()});
    for (std::size_t gy = 0; gy < g.mid_h(); ++gy)
        for (std::size_t gx = 0; gx < g.mid_w(); ++gx)
            for (std::size_t c = 0; c < g.d_model; ++c)
                out.at(c, gy, gx) = m.at(gy * g.mid_w() + gx, c);
    return out;
}

// Eq.-1 style aggregation of the selected experts' projection matrices.
void aggregate_ca_weights(const MoeCaLayer& layer, const GateWeights& gates, Tensor& wq,
                          Tensor& wk, Tensor& wv) {
    const auto& proto = layer.experts.front();
    wq = Tensor(proto.w_q.shape());
    wk = Tensor(proto.w_k.shape());
    wv = Tensor(proto.w_v.shape());
    for (std::size_t s = 0; s < gates.selected.size(); ++s) {
        const auto& e = layer.experts[gates.selected[s]];
        axpy(wq, gates.weights[s], e.w_q);
        axpy(wk, gates.weights[s], e.w_k);
        axpy(wv, gates.weights[s], e.w_v);
    }
}

Tensor ca_aggregate_forward(const Tensor& x, const Tensor& ctx, const MoeCaLayer& layer,
                            const GateWeights& gates, ForwardCache::CaCache* cache) {
    Tensor wq, wk, wv;
    aggregate_ca_weights(layer, gates, wq, wk, wv);
    Tensor q = matmul_nt(x, wq);
    Tensor k = matmul_nt(ctx, wk);
    Tensor v = matmul_nt(ctx, wv);
    auto [attn_out, attn_w] = attention_with_weights(q, k, v);
    Tensor out = x;
    add_inplace(out, attn_out);
    if (cache) {
        cache->input = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn_w);
        cache->wq_agg = std::move(wq);
        cache->wk_agg = std::move(wk);
        cache->wv_agg = std::move(wv);
    }
    return out;
}

// Backward through one aggregate cross-attention layer. Returns dX and
// accumulates per-expert weight gradients scaled by the gate weights.
Tensor ca_aggregate_backward(const ForwardCache::CaCache& c, const Tensor& ctx,
                             const GateWeights& gates, const Tensor& d_out, MoeCaLayer& grads) {
    std::size_t n = c.attn.dim(0), l = c.attn.dim(1);
    double scale = 1.0 / std::sqrt(static_cast<double>(c.q.dim(1)));
    Tensor dv = matmul_tn(c.attn, d_out);
    Tensor da = matmul_nt(d_out, c.v);
    Tensor ds({n, l});
    for (std::size_t i = 0; i < n; ++i) {
        double row_dot = 0.0;
        for (std::size_t j = 0; j < l; ++j) row_dot += da.at(i, j) * c.attn.at(i, j);
        for (std::size_t j = 0; j < l; ++j)
            ds.at(i, j) = c.attn.at(i, j) * (da.at(i, j) - row_dot);
    }
    Tensor dq = matmul(ds, c.k);
    Tensor dk = matmul_tn(ds, c.q);
    for (auto& v : dq.values()) v *= scale;
    for (auto& v : dk.values()) v *= scale;

    Tensor dwq = matmul_tn(dq, c.input);
    Tensor dwk = matmul_tn(dk, ctx);
    Tensor dwv = matmul_tn(dv, ctx);
    for (std::size_t s = 0; s < gates.selected.size(); ++s) {
        auto& e = grads.experts[gates.selected[s]];
        axpy(e.w_q, gates.weights[s], dwq);
        axpy(e.w_k, gates.weights[s], dwk);
        axpy(e.w_v, gates.weights[s], dwv);
    }
    Tensor dx = d_out;
    add_inplace(dx, matmul(dq, c.wq_agg));
    return dx;
}

Tensor ff_forward(const Tensor& x, const MoeFfLayer& layer, const GateWeights& gates,
                  ForwardCache::FfCache* cache) {
    Tensor out = x;
    if (cache) {
        cache->input = x;
        cache->hidden.clear();
    }
    for (std::size_t s = 0; s < gates.selected.size(); ++s) {
        const auto& e = layer.experts[gates.selected[s]];
        Tensor h = tanh_of(linear(x, e.w1, e.b1));
        axpy(out, gates.weights[s], linear(h, e.w2, e.b2));
        if (cache) cache->hidden.push_back(std::move(h));
    }
    return out;
}

Tensor ff_backward(const ForwardCache::FfCache& c, const MoeFfLayer& layer,
                   const GateWeights& gates, const Tensor& d_out, MoeFfLayer& grads) {
    Tensor dx = d_out;
    for (std::size_t s = 0; s < gates.selected.size(); ++s) {
        const auto& e = layer.experts[gates.selected[s]];
        auto& ge = grads.experts[gates.selected[s]];
        const Tensor& h = c.hidden[s];
        Tensor df(d_out.shape());
        axpy(df, gates.weights[s], d_out);
        add_colsum(ge.b2, df);
        add_inplace(ge.w2, matmul_tn(df, h));
        Tensor dh = matmul(df, e.w2);
        for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= 1.0 - h[i] * h[i];
        add_colsum(ge.b1, dh);
        add_inplace(ge.w1, matmul_tn(dh, c.input));
        add_inplace(dx, matmul(dh, e.w1));
    }
    return dx;
}

void check_forward_inputs(const UNetWeights& w, const Tensor& z, int t, const PromptEmbedding& ctx,
                          const GateWeights& gates) {
    const auto& g = w.geom;
    if (z.shape() != std::vector<std::size_t>{g.latent_c, g.latent_h, g.latent_w})
        throw std::invalid_argument("unet_forward: latent shape " + shape_string(z.shape()) +
                                    " does not match geometry");
    if (t < 1 || t > g.timesteps)
        throw std::invalid_argument("unet_forward: timestep out of [1, T]");
    if (ctx.tokens.rank() != 2 || ctx.tokens.dim(1) != g.d_txt)
        throw std::invalid_argument("unet_forward: context dim does not match d_txt");
    gates.validate();
    if (gates.num_experts != w.num_experts())
        throw std::invalid_argument("unet_forward: gate expert count mismatch");
}

Tensor input_tokens(const UNetWeights& w, const Tensor& z, int t, Tensor& patches_out) {
    patches_out = extract_patches(w.geom, z);
    Tensor x0 = linear(patches_out, w.backbone.w_in, w.backbone.b_in);
    std::size_t n = x0.dim(0), d = x0.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            x0.at(i, j) += w.backbone.t_emb.at(static_cast<std::size_t>(t - 1), j);
    return x0;
}

// Shared pipeline from the first down-block residual (x1) to the output.
UNetOutput forward_from_x1(const UNetWeights& w, const PromptEmbedding& ctx,
                           const GateWeights& gates, const Tensor& x1, ForwardCache* cache) {
    const auto& g = w.geom;
    const auto& bb = w.backbone;
    Tensor x2 = ff_forward(x1, w.down_ff, gates, cache ? &cache->down_ff : nullptr);
    Tensor grouped = gather_groups(g, x2);
    Tensor m0 = linear(grouped, bb.w_mid, bb.b_mid);
    Tensor m1 = ca_aggregate_forward(m0, ctx.tokens, w.mid_ca, gates,
                                     cache ? &cache->mid_ca : nullptr);
    Tensor mid_h = tanh_of(linear(m1, bb.mid_w1, bb.mid_b1));
    Tensor m2 = m1;
    add_inplace(m2, linear(mid_h, bb.mid_w2, bb.mid_b2));
    Tensor u0 = scatter_groups(g, linear(m2, bb.w_up, bb.b_up));
    add_inplace(u0, x2);  // skip connection
    Tensor u1 = ca_aggregate_forward(u0, ctx.tokens, w.up_ca, gates,
                                     cache ? &cache->up_ca : nullptr);
    Tensor u2 = ff_forward(u1, w.up_ff, gates, cache ? &cache->up_ff : nullptr);
    Tensor y = linear(u2, bb.w_out, bb.b_out);

    UNetOutput out;
    out.eps = scatter_patches(g, y);
    out.mid.pre = tokens_to_chw(g, m0);
    out.mid.post = tokens_to_chw(g, m2);
    if (cache) {
        cache->x1 = x1;
        cache->x2 = std::move(x2);
        cache->grouped = std::move(grouped);
        cache->m0 = std::move(m0);
        cache->m1 = std::move(m1);
        cache->m2 = std::move(m2);
        cache->mid_hidden = std::move(mid_h);
        cache->u0 = std::move(u0);
        cache->u1 = std::move(u1);
        cache->u2 = std::move(u2);
    }
    return out;
}

double fan_in(const Tensor& t) { return static_cast<double>(t.dim(1)); }

void init_matrix(Tensor& t, RngStream& stream) {
    double scale = 1.0 / std::sqrt(fan_in(t));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * stream.next_gaussian();
}

}  // namespace

void UNetGeometry::validate() const {
    if (latent_c == 0 || latent_h == 0 || latent_w == 0 || d_model == 0 || d_txt == 0 ||
        d_ff == 0 || mid_hidden == 0)
        throw std::invalid_argument("UNetGeometry: all dimensions must be >= 1");
    if (latent_h % 4 != 0 || latent_w % 4 != 0)
        throw std::invalid_argument("UNetGeometry: latent H and W must be divisible by 4");
    if (d_attn != d_model)
        throw std::invalid_argument(
            "UNetGeometry: d_attn must equal d_model (residual addition, no output projection)");
    if (timesteps < 2) throw std::invalid_argument("UNetGeometry: timesteps must be >= 2");
}

void UNetWeights::validate() const {
    geom.validate();
    std::size_t m = num_experts();
    if (m == 0) throw std::invalid_argument("UNetWeights: at least one expert required");
    for (const MoeCaLayer* ca : {&down_ca, &mid_ca, &up_ca})
        if (ca->experts.size() != m)
            throw std::invalid_argument("UNetWeights: cross-attention layer expert count mismatch");
    for (const MoeFfLayer* ff : {&down_ff, &up_ff})
        if (ff->experts.size() != m)
            throw std::invalid_argument("UNetWeights: feed-forward layer expert count mismatch");
    if (!down_ca.is_separation)
        throw std::invalid_argument("UNetWeights: down_ca must be the separation layer");
}

void GateWeights::validate() const {
    if (selected.empty()) throw std::invalid_argument("GateWeights: empty selection");
    if (selected.size() != weights.size())
        throw std::invalid_argument("GateWeights: selected/weights size mismatch");
    double sum = 0.0;
    for (std::size_t s = 0; s < selected.size(); ++s) {
        if (selected[s] >= num_experts)
            throw std::invalid_argument("GateWeights: expert index out of range");
        if (s > 0 && selected[s] <= selected[s - 1])
            throw std::invalid_argument("GateWeights: selection must be strictly ascending");
        if (weights[s] < 0.0) throw std::invalid_argument("GateWeights: negative weight");
        sum += weights[s];
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("GateWeights: weights must sum to 1");
}

GateWeights one_hot_gate(std::size_t expert, std::size_t num_experts) {
    if (expert >= num_experts) throw std::invalid_argument("one_hot_gate: index out of range");
    return GateWeights{{expert}, {1.0}, num_experts};
}

static GateWeights gates_from_query(const Tensor& query,
                                    const std::vector<ExpertDescriptor>& descriptors,
                                    std::size_t n, std::size_t d_txt) {
    std::size_t m = descriptors.size();
    if (m == 0) throw std::invalid_argument("compute_gate_weights: no descriptors");
    if (n < 1 || n > m)
        throw std::invalid_argument("compute_gate_weights: need 1 <= n <= M, got n=" +
                                    std::to_string(n) + " M=" + std::to_string(m));
    std::vector<double> alpha(m);
    for (std::size_t i = 0; i < m; ++i) {
        GateVector gv = gate_vector(descriptors[i], d_txt);
        alpha[i] = dot(gv.v.values(), query.values());
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (alpha[a] != alpha[b]) return alpha[a] > alpha[b];
        return a < b;  // ties to the lower index
    });
    std::vector<std::size_t> selected(order.begin(), order.begin() + static_cast<long>(n));
    std::sort(selected.begin(), selected.end());
    std::vector<double> chosen(n);
    for (std::size_t s = 0; s < n; ++s) chosen[s] = alpha[selected[s]];
    return GateWeights{std::move(selected), softmax(chosen), m};
}

GateWeights compute_gate_weights(const Prompt& positive_prompt, const Prompt& negative_prompt,
                                 const std::vector<ExpertDescriptor>& descriptors, std::size_t n,
                                 std::size_t d_txt) {
    PromptEmbedding pos = embed_prompt(positive_prompt, d_txt);
    PromptEmbedding neg = embed_prompt(negative_prompt, d_txt);
    Tensor query({2 * d_txt});
    for (std::size_t j = 0; j < d_txt; ++j) {
        query[j] = pos.pooled[j];
        query[d_txt + j] = neg.pooled[j];
    }
    return gates_from_query(query, descriptors, n, d_txt);
}

GateWeights compute_gate_weights(const Prompt& prompt,
                                 const std::vector<ExpertDescriptor>& descriptors, std::size_t n,
                                 std::size_t d_txt) {
    PromptEmbedding pos = embed_prompt(prompt, d_txt);
    std::vector<double> null_row = token_embedding(kNullTokenId, d_txt);
    Tensor query({2 * d_txt});
    for (std::size_t j = 0; j < d_txt; ++j) {
        query[j] = pos.pooled[j];
        query[d_txt + j] = null_row[j];
    }
    return gates_from_query(query, descriptors, n, d_txt);
}

std::vector<Tensor> moe_cross_attention(const Tensor& x, const PromptEmbedding& ctx,
                                        const MoeCaLayer& layer, const GateWeights& gates,
                                        CaMode mode) {
    gates.validate();
    if (gates.num_experts != layer.experts.size())
        throw std::invalid_argument("moe_cross_attention: gate expert count mismatch");
    if (mode == CaMode::aggregate) {
        std::vector<Tensor> out;
        out.push_back(ca_aggregate_forward(x, ctx.tokens, layer, gates, nullptr));
        return out;
    }
    if (!layer.is_separation)
        throw std::invalid_argument(
            "moe_cross_attention: separate mode is only legal at the separation layer");
    std::vector<Tensor> out;
    out.reserve(layer.experts.size());
    for (const auto& e : layer.experts) {
        Tensor q = matmul_nt(x, e.w_q);
        Tensor k = matmul_nt(ctx.tokens, e.w_k);
        Tensor v = matmul_nt(ctx.tokens, e.w_v);
        Tensor path = x;
        add_inplace(path, attention(q, k, v));
        out.push_back(std::move(path));
    }
    return out;
}

Tensor moe_feed_forward(const Tensor& x, const MoeFfLayer& layer, const GateWeights& gates) {
    gates.validate();
    if (gates.num_experts != layer.experts.size())
        throw std::invalid_argument("moe_feed_forward: gate expert count mismatch");
    return ff_forward(x, layer, gates, nullptr);
}

UNetOutput unet_forward(const UNetWeights& weights, const Tensor& z, int t,
                        const PromptEmbedding& ctx, const GateWeights& gates) {
    check_forward_inputs(weights, z, t, ctx, gates);
    Tensor patches;
    Tensor x0 = input_tokens(weights, z, t, patches);
    Tensor x1 = ca_aggregate_forward(x0, ctx.tokens, weights.down_ca, gates, nullptr);
    return forward_from_x1(weights, ctx, gates, x1, nullptr);
}

std::vector<UNetOutput> unet_forward_separate(const UNetWeights& weights, const Tensor& z, int t,
                                              const PromptEmbedding& ctx,
                                              const GateWeights& gates) {
    check_forward_inputs(weights, z, t, ctx, gates);
    Tensor patches;
    Tensor x0 = input_tokens(weights, z, t, patches);
    // every expert gets its own computational path, regardless of S
    std::vector<Tensor> paths = moe_cross_attention(x0, ctx, weights.down_ca, gates,
                                                    CaMode::separate);
    std::vector<UNetOutput> out;
    out.reserve(paths.size());
    for (auto& x1 : paths) out.push_back(forward_from_x1(weights, ctx, gates, x1, nullptr));
    return out;
}

UNetOutput unet_forward_cached(const UNetWeights& weights, const Tensor& z, int t,
                               const PromptEmbedding& ctx, const GateWeights& gates,
                               ForwardCache& cache) {
    check_forward_inputs(weights, z, t, ctx, gates);
    cache.t = t;
    cache.gates = gates;
    cache.ctx_tokens = ctx.tokens;
    Tensor x0 = input_tokens(weights, z, t, cache.patches);
    cache.x0 = x0;
    Tensor x1 = ca_aggregate_forward(x0, ctx.tokens, weights.down_ca, gates, &cache.down_ca);
    return forward_from_x1(weights, ctx, gates, x1, &cache);
}

UNetGradients zeros_like(const UNetWeights& weights) {
    UNetGradients g;
    g.geom = weights.geom;
    auto zero_ca = [&](const MoeCaLayer& src, MoeCaLayer& dst) {
        dst.is_separation = src.is_separation;
        for (const auto& e : src.experts)
            dst.experts.push_back(
                {Tensor(e.w_q.shape()), Tensor(e.w_k.shape()), Tensor(e.w_v.shape())});
    };
    auto zero_ff = [&](const MoeFfLayer& src, MoeFfLayer& dst) {
        for (const auto& e : src.experts)
            dst.experts.push_back({Tensor(e.w1.shape()), Tensor(e.b1.shape()),
                                   Tensor(e.w2.shape()), Tensor(e.b2.shape())});
    };
    const auto& bb = weights.backbone;
    g.backbone = {Tensor(bb.w_in.shape()),   Tensor(bb.b_in.shape()),  Tensor(bb.t_emb.shape()),
                  Tensor(bb.w_mid.shape()),  Tensor(bb.b_mid.shape()), Tensor(bb.mid_w1.shape()),
                  Tensor(bb.mid_b1.shape()), Tensor(bb.mid_w2.shape()), Tensor(bb.mid_b2.shape()),
                  Tensor(bb.w_up.shape()),   Tensor(bb.b_up.shape()),  Tensor(bb.w_out.shape()),
                  Tensor(bb.b_out.shape())};
    zero_ca(weights.down_ca, g.down_ca);
    zero_ff(weights.down_ff, g.down_ff);
    zero_ca(weights.mid_ca, g.mid_ca);
    zero_ff(weights.up_ff, g.up_ff);
    zero_ca(weights.up_ca, g.up_ca);
    return g;
}

void unet_backward(const UNetWeights& weights, const ForwardCache& cache, const Tensor& d_eps,
                   UNetGradients& grads) {
    const auto& g = weights.geom;
    const auto& bb = weights.backbone;
    const auto& gates = cache.gates;
    auto& gb = grads.backbone;

    // output head
    Tensor dy = extract_patches(g, d_eps);
    add_inplace(gb.w_out, matmul_tn(dy, cache.u2));
    add_colsum(gb.b_out, dy);
    Tensor du2 = matmul(dy, bb.w_out);

    // up-block MoE layers
    Tensor du1 = ff_backward(cache.up_ff, weights.up_ff, gates, du2, grads.up_ff);
    Tensor du0 = ca_aggregate_backward(cache.up_ca, cache.ctx_tokens, gates, du1, grads.up_ca);

    // skip connection and up projection
    Tensor dx2 = du0;
    Tensor duraw = gather_groups(g, du0);
    add_inplace(gb.w_up, matmul_tn(duraw, cache.m2));
    add_colsum(gb.b_up, duraw);
    Tensor dm2 = matmul(duraw, bb.w_up);

    // backbone mid MLP (residual)
    add_inplace(gb.mid_w2, matmul_tn(dm2, cache.mid_hidden));
    add_colsum(gb.mid_b2, dm2);
    Tensor dh = matmul(dm2, bb.mid_w2);
    for (std::size_t i = 0; i < dh.size(); ++i)
        dh[i] *= 1.0 - cache.mid_hidden[i] * cache.mid_hidden[i];
    add_inplace(gb.mid_w1, matmul_tn(dh, cache.m1));
    add_colsum(gb.mid_b1, dh);
    Tensor dm1 = dm2;
    add_inplace(dm1, matmul(dh, bb.mid_w1));

    Tensor dm0 = ca_aggregate_backward(cache.mid_ca, cache.ctx_tokens, gates, dm1, grads.mid_ca);

    // mid merge
    add_inplace(gb.w_mid, matmul_tn(dm0, cache.grouped));
    add_colsum(gb.b_mid, dm0);
    Tensor dgrouped = matmul(dm0, bb.w_mid);
    add_inplace(dx2, scatter_groups(g, dgrouped));

    // down-block MoE layers
    Tensor dx1 = ff_backward(cache.down_ff, weights.down_ff, gates, dx2, grads.down_ff);
    Tensor dx0 = ca_aggregate_backward(cache.down_ca, cache.ctx_tokens, gates, dx1,
                                       grads.down_ca);

    // timestep embedding and input projection
    std::size_t n = dx0.dim(0), d = dx0.dim(1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            gb.t_emb.at(static_cast<std::size_t>(cache.t - 1), j) += dx0.at(i, j);
    add_inplace(gb.w_in, matmul_tn(dx0, cache.patches));
    add_colsum(gb.b_in, dx0);
}

std::vector<Tensor*> parameter_list(UNetWeights& w, ParamScope scope, std::size_t expert_index) {
    std::vector<Tensor*> out;
    if (scope == ParamScope::backbone_only) {
        auto& bb = w.backbone;
        out = {&bb.w_in,   &bb.b_in,   &bb.t_emb,  &bb.w_mid, &bb.b_mid, &bb.mid_w1, &bb.mid_b1,
               &bb.mid_w2, &bb.mid_b2, &bb.w_up,   &bb.b_up,  &bb.w_out, &bb.b_out};
        return out;
    }
    if (expert_index >= w.num_experts())
        throw std::invalid_argument("parameter_list: expert index out of range");
    for (MoeCaLayer* ca : {&w.down_ca, &w.mid_ca, &w.up_ca}) {
        auto& e = ca->experts[expert_index];
        out.push_back(&e.w_q);
        out.push_back(&e.w_k);
        out.push_back(&e.w_v);
    }
    for (MoeFfLayer* ff : {&w.down_ff, &w.up_ff}) {
        auto& e = ff->experts[expert_index];
        out.push_back(&e.w1);
        out.push_back(&e.b1);
        out.push_back(&e.w2);
        out.push_back(&e.b2);
    }
    return out;
}

std::vector<const Tensor*> parameter_list(const UNetWeights& weights, ParamScope scope,
                                          std::size_t expert_index) {
    auto mut = parameter_list(const_cast<UNetWeights&>(weights), scope, expert_index);
    return {mut.begin(), mut.end()};
}

UNetWeights init_unet(const UNetGeometry& geom, std::size_t num_experts, RngStream& stream) {
    geom.validate();
    if (num_experts == 0) throw std::invalid_argument("init_unet: num_experts must be >= 1");
    UNetWeights w;
    w.geom = geom;
    auto& bb = w.backbone;
    bb.w_in = Tensor({geom.d_model, geom.patch_dim()});
    bb.b_in = Tensor({geom.d_model});
    bb.t_emb = Tensor({static_cast<std::size_t>(geom.timesteps), geom.d_model});
    bb.w_mid = Tensor({geom.d_model, geom.merge2_dim()});
    bb.b_mid = Tensor({geom.d_model});
    bb.mid_w1 = Tensor({geom.mid_hidden, geom.d_model});
    bb.mid_b1 = Tensor({geom.mid_hidden});
    bb.mid_w2 = Tensor({geom.d_model, geom.mid_hidden});
    bb.mid_b2 = Tensor({geom.d_model});
    bb.w_up = Tensor({geom.merge2_dim(), geom.d_model});
    bb.b_up = Tensor({geom.merge2_dim()});
    bb.w_out = Tensor({geom.patch_dim(), geom.d_model});
    bb.b_out = Tensor({geom.patch_dim()});
    init_matrix(bb.w_in, stream);
    init_matrix(bb.w_mid, stream);
    init_matrix(bb.mid_w1, stream);
    init_matrix(bb.mid_w2, stream);
    init_matrix(bb.w_up, stream);
    init_matrix(bb.w_out, stream);

    w.down_ca.is_separation = true;
    for (std::size_t i = 0; i < num_experts; ++i) {
        w.down_ca.experts.push_back({Tensor({geom.d_attn, geom.d_model}),
                                     Tensor({geom.d_attn, geom.d_txt}),
                                     Tensor({geom.d_attn, geom.d_txt})});
        w.mid_ca.experts.push_back({Tensor({geom.d_attn, geom.d_model}),
                                    Tensor({geom.d_attn, geom.d_txt}),
                                    Tensor({geom.d_attn, geom.d_txt})});
        w.up_ca.experts.push_back({Tensor({geom.d_attn, geom.d_model}),
                                   Tensor({geom.d_attn, geom.d_txt}),
                                   Tensor({geom.d_attn, geom.d_txt})});
        w.down_ff.experts.push_back({Tensor({geom.d_ff, geom.d_model}), Tensor({geom.d_ff}),
                                     Tensor({geom.d_model, geom.d_ff}), Tensor({geom.d_model})});
        w.up_ff.experts.push_back({Tensor({geom.d_ff, geom.d_model}), Tensor({geom.d_ff}),
                                   Tensor({geom.d_model, geom.d_ff}), Tensor({geom.d_model})});
        reinit_expert(w, i, stream);
    }
    return w;
}

void reinit_expert(UNetWeights& weights, std::size_t expert_index, RngStream& stream) {
    for (Tensor* t : parameter_list(weights, ParamScope::expert_only, expert_index)) {
        if (t->rank() == 2)
            init_matrix(*t, stream);
        else
            for (auto& v : t->values()) v = 0.0;  // biases
    }
}

void copy_expert(UNetWeights& dst, std::size_t dst_index, const UNetWeights& src,
                 std::size_t src_index) {
    auto d = parameter_list(dst, ParamScope::expert_only, dst_index);
    auto s = parameter_list(src, ParamScope::expert_only, src_index);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!d[i]->same_shape(*s[i]))
            throw std::invalid_argument("copy_expert: geometry mismatch");
        *d[i] = *s[i];
    }
}

}  // namespace emoe
