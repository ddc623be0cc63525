#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "emoe/checkpoint.hpp"
#include "emoe/config.hpp"
#include "emoe/engine.hpp"
#include "emoe/experiments.hpp"
#include "emoe/gp_probe.hpp"
#include "emoe/training.hpp"

namespace {

using namespace emoe;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitError = 2;  // usage or IO error
constexpr int kExitHalt = 3;   // uncertainty threshold halt

ExpertBundle bundle_from(const RunConfig& cfg, const fs::path& dir,
                         const std::vector<std::size_t>& experts = {}) {
    ExpertBundle b;
    if (experts.empty())
        b.weights = load_unet(dir, cfg.geom, cfg.num_experts);
    else
        b.weights = load_unet(dir, cfg.geom, experts);
    b.schedule = schedule_from(cfg);
    if (experts.empty()) {
        b.descriptors = cfg.descriptors;
        b.top_n = cfg.top_n;
    } else {
        for (std::size_t i : experts) b.descriptors.push_back(cfg.descriptors.at(i));
        b.top_n = std::min(cfg.top_n, experts.size());
    }
    return b;
}

void print_estimate(const UncertaintyEstimate& est, const char* decision) {
    std::printf("eu %.12g\n", est.eu);
    std::printf("reported %.12g\n", est.reported);
    std::printf("space %s\n", to_string(est.space).c_str());
    std::printf("decision %s\n", decision);
}

int cmd_train(const RunConfig& cfg, const fs::path& ckpt_dir) {
    TrainedBundle trained = train_bundle(training_config_from(cfg));
    save_unet(ckpt_dir, trained.weights);
    std::printf("backbone loss %.6g -> %.6g over %zu epochs\n",
                trained.backbone_log.epoch_loss.front(), trained.backbone_log.epoch_loss.back(),
                trained.backbone_log.epoch_loss.size());
    for (std::size_t i = 0; i < trained.expert_logs.size(); ++i)
        std::printf("expert %zu loss %.6g -> %.6g\n", i,
                    trained.expert_logs[i].epoch_loss.front(),
                    trained.expert_logs[i].epoch_loss.back());
    std::printf("checkpoints written to %s\n", ckpt_dir.string().c_str());
    return kExitOk;
}

int cmd_score(const RunConfig& cfg, const fs::path& ckpt_dir, const Prompt& prompt,
              const std::string& space_name, bool fast, std::optional<double> threshold) {
    EmoeEngine engine(bundle_from(cfg, ckpt_dir));
    UncertaintySpace space = uncertainty_space_from_string(space_name);
    if (fast) {
        auto [est, latent] = engine.fast_emoe(prompt, cfg.seed, threshold);
        if (!latent) {
            print_estimate(est, "halt");
            return kExitHalt;
        }
        print_estimate(est, "proceed");
        return kExitOk;
    }
    print_estimate(engine.estimate_uncertainty(prompt, cfg.seed, space), "proceed");
    return kExitOk;
}

nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", t.values()}};
}

int cmd_generate(const RunConfig& cfg, const fs::path& ckpt_dir, const Prompt& prompt,
                 const fs::path& out_file) {
    EmoeEngine engine(bundle_from(cfg, ckpt_dir));
    EmoeResult result = engine.emoe_rollout(prompt, cfg.seed, cfg.geom.timesteps);
    nlohmann::json j;
    j["prompt"] = prompt.text;
    j["language_tag"] = prompt.language_tag;
    j["seed"] = cfg.seed;
    j["estimate"] = {{"eu", result.estimate.eu},
                     {"reported", result.estimate.reported},
                     {"space", to_string(result.estimate.space)},
                     {"d", result.estimate.d}};
    j["latents"] = nlohmann::json::array();
    for (const auto& latent : result.latents) j["latents"].push_back(tensor_to_json(latent.z));
    std::ofstream out(out_file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + out_file.string() + " for writing");
    out << j.dump(2) << "\n";
    std::printf("reported %.12g\n", result.estimate.reported);
    std::printf("latents written to %s\n", out_file.string().c_str());
    return kExitOk;
}

int cmd_experiment(const RunConfig& cfg, const fs::path& ckpt_dir, const fs::path& out_dir) {
    EmoeEngine engine(bundle_from(cfg, ckpt_dir));
    Corpus corpus = make_corpus(cfg.corpus, cfg.seed);
    ExperimentConfig ec{cfg.seed, cfg.threads, config_hash(cfg)};
    ExperimentReport report = run_experiment(engine, corpus, ec);
    write_report(report, out_dir);
    std::printf("scored %zu prompts\n", report.per_prompt.size());
    std::printf("jt decreasing-trend p %.6g\n", report.jt_alignment_decreasing.p_value);
    if (report.welch_ood_vs_in)
        std::printf("welch ood>in p %.6g\n", report.welch_ood_vs_in->p_value);
    if (report.pearson_reported_alignment)
        std::printf("pearson(reported, alignment) %.6g\n", *report.pearson_reported_alignment);
    std::printf("report written to %s\n", out_dir.string().c_str());
    return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, const fs::path& ckpt_dir, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    ExpertBundle bundle = bundle_from(cfg, ckpt_dir);
    Corpus corpus = make_corpus(cfg.corpus, cfg.seed);
    ExperimentConfig ec{cfg.seed, cfg.threads, config_hash(cfg)};

    auto sweep = ensemble_size_sweep(bundle, corpus, ec);
    write_ensemble_sweep_csv(sweep, out_dir / "ensemble_sweep.csv");
    std::printf("ensemble sweep: %zu subsets\n", sweep.size());

    EmoeEngine engine(bundle);
    write_step_series_csv(denoising_step_series(engine, corpus, ec),
                          out_dir / "step_series.csv");
    write_space_summary_csv(latent_space_summary(engine, corpus, ec), out_dir / "spaces.csv");

    // similar-experts bundle: same init, different fine-tune slices
    fs::path similar_dir = ckpt_dir.string() + "_similar";
    if (!fs::exists(similar_dir / "backbone.emoe")) {
        RunConfig similar_cfg = cfg;
        similar_cfg.similar_init = true;
        std::printf("training similar-experts bundle into %s\n", similar_dir.string().c_str());
        save_unet(similar_dir, train_bundle(training_config_from(similar_cfg)).weights);
    }
    EmoeEngine similar_engine(bundle_from(cfg, similar_dir));
    std::vector<double> in_rep, ood_rep;
    for (const auto& entry : corpus.entries) {
        double v = similar_engine
                       .estimate_uncertainty(entry.prompt, cfg.seed, UncertaintySpace::mid_post)
                       .reported;
        (entry.split == SplitLabel::in_dist ? in_rep : ood_rep).push_back(v);
    }
    nlohmann::json j;
    if (in_rep.size() >= 2 && ood_rep.size() >= 2) {
        TrendTestResult welch = welch_t_test(ood_rep, in_rep);
        j["welch_ood_vs_in_p"] = welch.p_value;
        std::printf("similar bundle welch ood>in p %.6g\n", welch.p_value);
    }
    double mi = 0, mo = 0;
    for (double v : in_rep) mi += v;
    for (double v : ood_rep) mo += v;
    j["mean_reported_in"] = in_rep.empty() ? 0.0 : mi / static_cast<double>(in_rep.size());
    j["mean_reported_ood"] = ood_rep.empty() ? 0.0 : mo / static_cast<double>(ood_rep.size());
    std::ofstream out(out_dir / "similar_check.json", std::ios::binary);
    out << j.dump(2) << "\n";
    std::printf("ablation outputs written to %s\n", out_dir.string().c_str());
    return kExitOk;
}

int cmd_gp_probe(const RunConfig& cfg, const fs::path& out_dir) {
    std::vector<std::size_t> sizes;
    for (std::size_t n = 2; n <= 256; n *= 2) sizes.push_back(n);
    GpProbeResult result = gp_convergence_probe(sizes, cfg.seed);
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "gp_probe.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write gp_probe.csv");
    out << "ensemble_size,mean_abs_error,var_estimate,var_rel_error\n";
    for (const auto& row : result.rows) {
        out << row.ensemble_size << ',';
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g\n", row.mean_abs_error,
                      row.var_estimate, row.var_rel_error);
        out << buf;
        std::printf("N %4zu  |mean err| %.6g  var %.6g  var rel err %.4g\n", row.ensemble_size,
                    row.mean_abs_error, row.var_estimate, row.var_rel_error);
    }
    std::printf("reference mean %.6g var %.6g (N=%zu)\n", result.reference_mean,
                result.reference_var, result.reference_size);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EMoE: zero-shot epistemic uncertainty for a toy MoE latent-diffusion model"};
    app.require_subcommand(1);

    std::string config_path, out_dir_flag;
    std::uint64_t seed_flag = 0;
    std::size_t threads_flag = 0;
    auto* opt_config = app.add_option("--config", config_path, "JSON config file");
    auto* opt_out = app.add_option("--out-dir", out_dir_flag, "output directory override");
    auto* opt_seed = app.add_option("--seed", seed_flag, "seed override");
    auto* opt_threads = app.add_option("--threads", threads_flag, "scoring worker threads");

    auto resolve = [&]() {
        RunConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
        if (opt_seed->count()) cfg.seed = seed_flag;
        if (opt_threads->count()) cfg.threads = threads_flag;
        (void)opt_config;
        return cfg;
    };

    int exit_code = kExitOk;

    auto* train = app.add_subcommand("train", "train backbone and per-expert checkpoints");
    bool train_similar = false;
    train->add_flag("--similar", train_similar, "clone every expert from the prototype init");
    train->fallthrough();
    train->callback([&] {
        RunConfig cfg = resolve();
        if (train_similar) cfg.similar_init = true;
        fs::path dir = out_dir_flag.empty() ? fs::path(cfg.checkpoint_dir) : fs::path(out_dir_flag);
        exit_code = cmd_train(cfg, dir);
    });

    auto* score = app.add_subcommand("score", "estimate uncertainty for one prompt");
    std::string score_text, score_lang = "en", score_space = "mid_post";
    bool score_fast = false;
    double score_threshold = 0.0;
    score->add_option("prompt", score_text, "prompt text")->required();
    score->add_option("--lang", score_lang, "language tag (non-en remaps the vocabulary)");
    score->add_option("--space", score_space, "mid_post | mid_pre | z_next");
    score->add_flag("--fast", score_fast, "Fast EMoE: halt or continue one aggregate rollout");
    auto* opt_threshold =
        score->add_option("--threshold", score_threshold, "halt when reported >= threshold");
    score->fallthrough();
    score->callback([&] {
        RunConfig cfg = resolve();
        std::optional<double> threshold;
        if (opt_threshold->count()) threshold = score_threshold;
        exit_code = cmd_score(cfg, cfg.checkpoint_dir, {score_text, score_lang}, score_space,
                              score_fast, threshold);
    });

    auto* generate = app.add_subcommand("generate", "M-path rollout, latents to JSON");
    std::string gen_text, gen_lang = "en", gen_out = "latents.json";
    generate->add_option("prompt", gen_text, "prompt text")->required();
    generate->add_option("--lang", gen_lang, "language tag");
    generate->add_option("--out", gen_out, "output JSON file");
    generate->fallthrough();
    generate->callback([&] {
        RunConfig cfg = resolve();
        exit_code = cmd_generate(cfg, cfg.checkpoint_dir, {gen_text, gen_lang}, gen_out);
    });

    auto* experiment = app.add_subcommand("experiment", "score a corpus and write the report");
    experiment->fallthrough();
    experiment->callback([&] {
        RunConfig cfg = resolve();
        fs::path dir = out_dir_flag.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir_flag);
        exit_code = cmd_experiment(cfg, cfg.checkpoint_dir, dir);
    });

    auto* ablate = app.add_subcommand("ablate", "ensemble-size / step / space ablations");
    ablate->fallthrough();
    ablate->callback([&] {
        RunConfig cfg = resolve();
        fs::path dir = out_dir_flag.empty() ? fs::path(cfg.out_dir) / "ablations"
                                            : fs::path(out_dir_flag);
        exit_code = cmd_ablate(cfg, cfg.checkpoint_dir, dir);
    });

    auto* gp = app.add_subcommand("gp-probe", "ensemble convergence probe");
    gp->fallthrough();
    gp->callback([&] {
        RunConfig cfg = resolve();
        fs::path dir = out_dir_flag.empty() ? fs::path(cfg.out_dir) : fs::path(out_dir_flag);
        exit_code = cmd_gp_probe(cfg, dir);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return exit_code;
}
