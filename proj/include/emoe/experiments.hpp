#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "emoe/corpus.hpp"
#include "emoe/engine.hpp"
#include "emoe/stats.hpp"

namespace emoe {

struct ExperimentConfig {
    std::uint64_t seed = 1234;
    std::size_t threads = 1;
    std::string config_hash;  // caller-provided fingerprint of the run config
};

struct PromptScore {
    std::string text;
    std::string language_tag;
    SplitLabel split = SplitLabel::in_dist;
    double eu = 0.0;
    double reported = 0.0;
    double alignment = 0.0;  // mean over the M rollout latents
    std::size_t char_count = 0;
    std::size_t word_count = 0;
};

struct QuartileSummary {
    std::vector<std::size_t> sizes;
    std::vector<double> mean_alignment;
    std::vector<double> std_alignment;
    std::vector<double> mean_chars;
    std::vector<double> std_chars;
    std::vector<double> mean_words;
    std::vector<double> std_words;
    std::vector<double> upper_bounds;  // quartile boundaries on reported uncertainty
};

struct ExperimentReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<PromptScore> per_prompt;
    QuartileSummary quartiles;
    TrendTestResult jt_alignment_decreasing;            // Q1..Q4 alignment trend
    std::optional<TrendTestResult> welch_ood_vs_in;     // reported EU, remap vs in-dist
    std::optional<double> pearson_reported_alignment;
};

// Scores every prompt (one separation pass + M-path rollout each), builds the
// quartile report and trend statistics. Throws "degenerate ensemble" if all
// uncertainties vanish.
ExperimentReport run_experiment(const EmoeEngine& engine, const Corpus& corpus,
                                const ExperimentConfig& config);

// report.json plus plot-ready CSV series (UTF-8, LF line endings).
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

// --- Ablation sweeps (§ ensemble size, denoising step, latent space) ---

struct EnsembleSubsetRow {
    std::vector<std::size_t> experts;
    double mean_reported_in = 0.0;
    double mean_reported_ood = 0.0;
    double welch_p = 1.0;  // ood reported > in-dist reported
};

// All expert subsets of size 2..M-1 plus the full set (11 subsets at M=4).
std::vector<std::vector<std::size_t>> ensemble_sweep_subsets(std::size_t num_experts);

std::vector<EnsembleSubsetRow> ensemble_size_sweep(const ExpertBundle& bundle,
                                                   const Corpus& corpus,
                                                   const ExperimentConfig& config);

struct StepSeriesRow {
    int t = 0;
    double mean_reported_in = 0.0;
    double mean_reported_ood = 0.0;
};

// Per-step EU series: one aggregate trajectory per prompt, one separation
// pass per step.
std::vector<StepSeriesRow> denoising_step_series(const EmoeEngine& engine, const Corpus& corpus,
                                                 const ExperimentConfig& config);

struct SpaceSummaryRow {
    UncertaintySpace space = UncertaintySpace::mid_post;
    double mean_reported_in = 0.0;
    double mean_reported_ood = 0.0;
    double welch_p = 1.0;
};

// All three latent-space estimates from single separation passes.
std::vector<SpaceSummaryRow> latent_space_summary(const EmoeEngine& engine, const Corpus& corpus,
                                                  const ExperimentConfig& config);

void write_ensemble_sweep_csv(const std::vector<EnsembleSubsetRow>& rows,
                              const std::filesystem::path& file);
void write_step_series_csv(const std::vector<StepSeriesRow>& rows,
                           const std::filesystem::path& file);
void write_space_summary_csv(const std::vector<SpaceSummaryRow>& rows,
                             const std::filesystem::path& file);

}  // namespace emoe
