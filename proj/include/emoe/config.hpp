#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emoe/corpus.hpp"
#include "emoe/diffusion.hpp"
#include "emoe/text_encoder.hpp"
#include "emoe/training.hpp"
#include "emoe/unet.hpp"

namespace emoe {

// Complete run configuration; every field has a documented default and any
// subset may be overridden from a JSON file.
struct RunConfig {
    UNetGeometry geom;
    std::size_t num_experts = 4;
    std::size_t top_n = 2;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    std::size_t dataset_size = 512;
    double data_noise = 0.1;
    int backbone_epochs = 40;
    int expert_epochs = 30;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    bool similar_init = false;

    CorpusConfig corpus;

    std::uint64_t seed = 1234;
    std::size_t threads = 1;

    std::vector<ExpertDescriptor> descriptors;  // defaulted to num_experts entries

    std::string checkpoint_dir = "checkpoints";
    std::string out_dir = "reports";

    void validate() const;
};

RunConfig default_config();

// Parses a JSON config; absent fields keep their defaults.
RunConfig load_config(const std::filesystem::path& file);
void save_config(const std::filesystem::path& file, const RunConfig& config);

std::string config_to_json_string(const RunConfig& config);

// FNV-1a fingerprint of the canonical JSON dump; lands in every report.
std::string config_hash(const RunConfig& config);

NoiseSchedule schedule_from(const RunConfig& config);
BundleTrainingConfig training_config_from(const RunConfig& config);

}  // namespace emoe
