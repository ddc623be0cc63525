#include "emoe/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "emoe/rng.hpp"

namespace emoe {

namespace {

using nlohmann::json;

const std::vector<ExpertDescriptor> kDefaultDescriptors = {
    {"red square bright", "blue circle dark"},
    {"blue circle smooth", "red star fuzzy"},
    {"green triangle vivid", "gold hexagon pale"},
    {"gold star large", "green square small"},
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void RunConfig::validate() const {
    geom.validate();
    if (num_experts == 0) throw std::invalid_argument("config: num_experts must be >= 1");
    if (top_n < 1 || top_n > num_experts)
        throw std::invalid_argument("config: need 1 <= top_n <= num_experts");
    if (!(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0))
        throw std::invalid_argument("config: need 0 < beta_min < beta_max < 1");
    if (descriptors.size() != num_experts)
        throw std::invalid_argument("config: descriptor count must equal num_experts");
    for (const auto& d : descriptors)
        if (d.positive.empty() || d.negative.empty())
            throw std::invalid_argument("config: descriptors must be nonempty");
    if (dataset_size < num_experts)
        throw std::invalid_argument("config: dataset_size must cover every expert slice");
    if (learning_rate < 0.0) throw std::invalid_argument("config: negative learning_rate");
    if (backbone_epochs < 1 || expert_epochs < 1)
        throw std::invalid_argument("config: epochs must be >= 1");
}

RunConfig default_config() {
    RunConfig c;
    for (std::size_t i = 0; i < c.num_experts; ++i)
        c.descriptors.push_back(kDefaultDescriptors[i % kDefaultDescriptors.size()]);
    return c;
}

static json to_json(const RunConfig& c) {
    json j;
    j["geometry"] = {{"latent_channels", c.geom.latent_c}, {"latent_h", c.geom.latent_h},
                     {"latent_w", c.geom.latent_w},        {"d_model", c.geom.d_model},
                     {"d_attn", c.geom.d_attn},            {"d_txt", c.geom.d_txt},
                     {"d_ff", c.geom.d_ff},                {"mid_hidden", c.geom.mid_hidden},
                     {"timesteps", c.geom.timesteps}};
    j["moe"] = {{"num_experts", c.num_experts}, {"top_n", c.top_n}};
    json descs = json::array();
    for (const auto& d : c.descriptors)
        descs.push_back({{"positive", d.positive}, {"negative", d.negative}});
    j["moe"]["descriptors"] = descs;
    j["schedule"] = {{"beta_min", c.beta_min}, {"beta_max", c.beta_max}};
    j["training"] = {{"dataset_size", c.dataset_size},
                     {"data_noise", c.data_noise},
                     {"backbone_epochs", c.backbone_epochs},
                     {"expert_epochs", c.expert_epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"similar_init", c.similar_init}};
    j["corpus"] = {{"in_dist", c.corpus.in_dist},
                   {"ood_remap", c.corpus.ood_remap},
                   {"ood_unseen", c.corpus.ood_unseen},
                   {"max_unseen_insertions", c.corpus.max_unseen_insertions},
                   {"remap_tag", c.corpus.remap_tag}};
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["paths"] = {{"checkpoint_dir", c.checkpoint_dir}, {"out_dir", c.out_dir}};
    return j;
}

static RunConfig from_json(const json& j) {
    RunConfig c = default_config();
    if (j.contains("geometry")) {
        const auto& g = j.at("geometry");
        maybe(g, "latent_channels", c.geom.latent_c);
        maybe(g, "latent_h", c.geom.latent_h);
        maybe(g, "latent_w", c.geom.latent_w);
        maybe(g, "d_model", c.geom.d_model);
        maybe(g, "d_attn", c.geom.d_attn);
        maybe(g, "d_txt", c.geom.d_txt);
        maybe(g, "d_ff", c.geom.d_ff);
        maybe(g, "mid_hidden", c.geom.mid_hidden);
        maybe(g, "timesteps", c.geom.timesteps);
    }
    if (j.contains("moe")) {
        const auto& m = j.at("moe");
        maybe(m, "num_experts", c.num_experts);
        maybe(m, "top_n", c.top_n);
        if (m.contains("descriptors")) {
            c.descriptors.clear();
            for (const auto& d : m.at("descriptors"))
                c.descriptors.push_back(
                    {d.at("positive").get<std::string>(), d.at("negative").get<std::string>()});
        }
    }
    // keep descriptor count in step with num_experts when only the count moved
    while (c.descriptors.size() < c.num_experts)
        c.descriptors.push_back(
            kDefaultDescriptors[c.descriptors.size() % kDefaultDescriptors.size()]);
    c.descriptors.resize(c.num_experts);
    if (j.contains("schedule")) {
        maybe(j.at("schedule"), "beta_min", c.beta_min);
        maybe(j.at("schedule"), "beta_max", c.beta_max);
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        maybe(t, "dataset_size", c.dataset_size);
        maybe(t, "data_noise", c.data_noise);
        maybe(t, "backbone_epochs", c.backbone_epochs);
        maybe(t, "expert_epochs", c.expert_epochs);
        maybe(t, "batch_size", c.batch_size);
        maybe(t, "learning_rate", c.learning_rate);
        maybe(t, "similar_init", c.similar_init);
    }
    if (j.contains("corpus")) {
        const auto& k = j.at("corpus");
        maybe(k, "in_dist", c.corpus.in_dist);
        maybe(k, "ood_remap", c.corpus.ood_remap);
        maybe(k, "ood_unseen", c.corpus.ood_unseen);
        maybe(k, "max_unseen_insertions", c.corpus.max_unseen_insertions);
        maybe(k, "remap_tag", c.corpus.remap_tag);
    }
    maybe(j, "seed", c.seed);
    maybe(j, "threads", c.threads);
    if (j.contains("paths")) {
        maybe(j.at("paths"), "checkpoint_dir", c.checkpoint_dir);
        maybe(j.at("paths"), "out_dir", c.out_dir);
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open config " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config " + file.string() + ": " + e.what());
    }
    return from_json(j);
}

void save_config(const std::filesystem::path& file, const RunConfig& config) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
    out << to_json(config).dump(2) << "\n";
}

std::string config_to_json_string(const RunConfig& config) { return to_json(config).dump(); }

std::string config_hash(const RunConfig& config) {
    std::uint64_t h = fnv1a64(config_to_json_string(config));
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

NoiseSchedule schedule_from(const RunConfig& config) {
    return build_schedule(config.geom.timesteps, config.beta_min, config.beta_max);
}

BundleTrainingConfig training_config_from(const RunConfig& config) {
    BundleTrainingConfig t;
    t.geom = config.geom;
    t.schedule = schedule_from(config);
    t.num_experts = config.num_experts;
    t.dataset_size = config.dataset_size;
    t.data_noise = config.data_noise;
    t.backbone_epochs = config.backbone_epochs;
    t.expert_epochs = config.expert_epochs;
    t.batch_size = config.batch_size;
    t.learning_rate = config.learning_rate;
    t.similar_init = config.similar_init;
    t.seed = config.seed;
    return t;
}

}  // namespace emoe
