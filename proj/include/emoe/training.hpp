#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emoe/diffusion.hpp"
#include "emoe/synthetic.hpp"
#include "emoe/unet.hpp"

namespace emoe {

struct TrainingConfig {
    int epochs = 30;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    std::size_t data_slice_id = 0;
};

struct TrainingLog {
    std::vector<double> epoch_loss;
};

// Which parameters an SGD run updates.
struct TrainScope {
    bool backbone = true;
    std::vector<std::size_t> experts;
};

// Minibatch SGD on the eps-prediction loss with uniformly sampled timesteps.
// Throws with the epoch index if the loss goes non-finite.
TrainingLog train_expert(const TrainingConfig& config, std::span<const TrainingExample> data,
                         const NoiseSchedule& schedule, UNetWeights& model,
                         const GateWeights& gates, const TrainScope& scope, RngStream stream);

struct BundleTrainingConfig {
    UNetGeometry geom;
    NoiseSchedule schedule;
    std::size_t num_experts = 4;
    std::size_t dataset_size = 512;
    double data_noise = 0.1;
    int backbone_epochs = 40;
    int expert_epochs = 30;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    // similar_init clones every expert from the jointly trained prototype
    // (same init, different fine-tune slices); otherwise each expert starts
    // from its own random init.
    bool similar_init = false;
    std::uint64_t seed = 0;
};

struct TrainedBundle {
    UNetWeights weights;
    TrainingLog backbone_log;
    std::vector<TrainingLog> expert_logs;
};

// Two-phase pipeline: shared backbone (plus a prototype expert) trained on
// the full synthetic dataset, then M expert conditioning-layer weight sets
// fine-tuned on disjoint slices from distinct seeds, backbone frozen.
TrainedBundle train_bundle(const BundleTrainingConfig& config);

}  // namespace emoe
