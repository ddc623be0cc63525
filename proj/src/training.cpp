#include "emoe/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace emoe {

namespace {

// stream-id purpose salts; keep every RNG consumer on its own stream
constexpr std::uint64_t kDatasetStream = 0x01;
constexpr std::uint64_t kInitStream = 0x02;
constexpr std::uint64_t kBackboneTrainStream = 0x03;
constexpr std::uint64_t kExpertInitBase = 0x100;
constexpr std::uint64_t kExpertTrainBase = 0x200;

void zero_all(UNetGradients& g) {
    for (ParamScope scope : {ParamScope::backbone_only, ParamScope::expert_only}) {
        if (scope == ParamScope::backbone_only) {
            for (Tensor* t : parameter_list(g, scope))
                for (auto& v : t->values()) v = 0.0;
        } else {
            for (std::size_t i = 0; i < g.num_experts(); ++i)
                for (Tensor* t : parameter_list(g, scope, i))
                    for (auto& v : t->values()) v = 0.0;
        }
    }
}

std::vector<Tensor*> scope_params(UNetWeights& w, const TrainScope& scope) {
    std::vector<Tensor*> out;
    if (scope.backbone) {
        auto bb = parameter_list(w, ParamScope::backbone_only);
        out.insert(out.end(), bb.begin(), bb.end());
    }
    for (std::size_t i : scope.experts) {
        auto e = parameter_list(w, ParamScope::expert_only, i);
        out.insert(out.end(), e.begin(), e.end());
    }
    return out;
}

}  // namespace

TrainingLog train_expert(const TrainingConfig& config, std::span<const TrainingExample> data,
                         const NoiseSchedule& schedule, UNetWeights& model,
                         const GateWeights& gates, const TrainScope& scope, RngStream stream) {
    if (data.empty()) throw std::invalid_argument("train_expert: empty dataset slice");
    if (config.epochs < 1) throw std::invalid_argument("train_expert: epochs must be >= 1");
    if (config.learning_rate < 0.0)
        throw std::invalid_argument("train_expert: negative learning rate");
    if (config.batch_size == 0) throw std::invalid_argument("train_expert: batch_size == 0");

    const std::size_t d_txt = model.geom.d_txt;
    std::vector<PromptEmbedding> ctx;
    ctx.reserve(data.size());
    for (const auto& ex : data) ctx.push_back(embed_prompt(ex.prompt, d_txt));

    std::vector<Tensor*> params = scope_params(model, scope);
    UNetGradients grads = zeros_like(model);
    std::vector<Tensor*> grad_params;
    {
        TrainScope s = scope;
        grad_params = scope_params(grads, s);
    }

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainingLog log;
    ForwardCache cache;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Fisher-Yates under the stream
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = stream.next_below(i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t epoch_count = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::size_t end = std::min(order.size(), start + config.batch_size);
            zero_all(grads);
            double batch_loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto& ex = data[order[k]];
                int t = 1 + static_cast<int>(stream.next_below(
                                static_cast<std::uint64_t>(schedule.steps)));
                auto [z_t, eps] = forward_marginal({ex.z0, 0}, t, schedule, stream);
                UNetOutput out =
                    unet_forward_cached(model, z_t.z, t, ctx[order[k]], gates, cache);
                batch_loss += ldm_loss(eps, out.eps);
                unet_backward(model, cache, ldm_loss_grad(eps, out.eps), grads);
            }
            double inv_batch = 1.0 / static_cast<double>(end - start);
            double step = config.learning_rate * inv_batch;
            for (std::size_t p = 0; p < params.size(); ++p) {
                auto& w = params[p]->values();
                const auto& gv = grad_params[p]->values();
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * gv[i];
            }
            epoch_loss += batch_loss;
            epoch_count += end - start;
        }
        double mean_loss = epoch_loss / static_cast<double>(epoch_count);
        if (!std::isfinite(mean_loss))
            throw std::runtime_error("train_expert: loss diverged at epoch " +
                                     std::to_string(epoch));
        log.epoch_loss.push_back(mean_loss);
    }
    return log;
}

TrainedBundle train_bundle(const BundleTrainingConfig& config) {
    config.geom.validate();
    if (config.num_experts == 0)
        throw std::invalid_argument("train_bundle: num_experts must be >= 1");
    if (config.dataset_size < config.num_experts)
        throw std::invalid_argument("train_bundle: dataset smaller than expert count");

    std::vector<TrainingExample> dataset =
        make_dataset(config.dataset_size, config.data_noise, config.geom,
                     RngStream(config.seed, kDatasetStream));

    // phase 1: backbone plus a prototype expert, jointly on all slices
    RngStream init_stream(config.seed, kInitStream);
    UNetWeights proto = init_unet(config.geom, 1, init_stream);
    TrainingConfig phase1;
    phase1.epochs = config.backbone_epochs;
    phase1.batch_size = config.batch_size;
    phase1.learning_rate = config.learning_rate;
    TrainingLog backbone_log =
        train_expert(phase1, std::span<const TrainingExample>(dataset), config.schedule, proto,
                     one_hot_gate(0, 1), TrainScope{true, {0}},
                     RngStream(config.seed, kBackboneTrainStream));

    // assemble the M-expert model around the frozen backbone
    RngStream scratch(config.seed, kInitStream + 0x10);
    UNetWeights model = init_unet(config.geom, config.num_experts, scratch);
    {
        auto dst = parameter_list(model, ParamScope::backbone_only);
        auto src = parameter_list(proto, ParamScope::backbone_only);
        for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
    }
    for (std::size_t i = 0; i < config.num_experts; ++i) {
        if (config.similar_init) {
            copy_expert(model, i, proto, 0);
        } else {
            RngStream es(config.seed, kExpertInitBase + i);
            reinit_expert(model, i, es);
        }
    }

    // phase 2: per-expert fine-tune on disjoint slices, distinct seeds
    std::size_t slice = dataset.size() / config.num_experts;
    TrainedBundle out;
    for (std::size_t i = 0; i < config.num_experts; ++i) {
        TrainingConfig pc;
        pc.epochs = config.expert_epochs;
        pc.batch_size = config.batch_size;
        pc.learning_rate = config.learning_rate;
        pc.data_slice_id = i;
        std::span<const TrainingExample> data(dataset.data() + i * slice, slice);
        out.expert_logs.push_back(train_expert(
            pc, data, config.schedule, model, one_hot_gate(i, config.num_experts),
            TrainScope{false, {i}}, RngStream(config.seed, kExpertTrainBase + i)));
    }
    out.weights = std::move(model);
    out.backbone_log = std::move(backbone_log);
    return out;
}

}  // namespace emoe
