#include "emoe/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace emoe {

namespace {

using nlohmann::json;

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, threads);
    if (threads == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : pool) th.join();
}

std::size_t count_words(const std::string& text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        bool space = c == ' ' || c == '\t';
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    return words;
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double v : xs) s += v;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean_of(xs);
    double s = 0.0;
    for (double v : xs) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);  // binary keeps LF endings
    if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
    return out;
}

// reported-uncertainty mean per split plus the one-sided Welch comparison
void split_reported(const std::vector<PromptScore>& scores, std::vector<double>& in_dist,
                    std::vector<double>& ood) {
    for (const auto& s : scores) {
        if (s.split == SplitLabel::in_dist)
            in_dist.push_back(s.reported);
        else
            ood.push_back(s.reported);
    }
}

}  // namespace

ExperimentReport run_experiment(const EmoeEngine& engine, const Corpus& corpus,
                                const ExperimentConfig& config) {
    if (corpus.entries.empty()) throw std::invalid_argument("run_experiment: empty corpus");
    const auto& geom = engine.bundle().weights.geom;
    int steps = engine.bundle().schedule.steps;

    ExperimentReport report;
    report.config_hash = config.config_hash;
    report.seed = config.seed;
    report.per_prompt.resize(corpus.entries.size());

    parallel_for(corpus.entries.size(), config.threads, [&](std::size_t i) {
        const auto& entry = corpus.entries[i];
        EmoeResult rollout = engine.emoe_rollout(entry.prompt, config.seed, steps);
        PromptScore score;
        score.text = entry.prompt.text;
        score.language_tag = entry.prompt.language_tag;
        score.split = entry.split;
        score.eu = rollout.estimate.eu;
        score.reported = rollout.estimate.reported;
        double align = 0.0;
        for (const auto& latent : rollout.latents)
            align += alignment_score(latent.z, entry.prompt, geom);
        score.alignment = align / static_cast<double>(rollout.latents.size());
        score.char_count = entry.prompt.text.size();
        score.word_count = count_words(entry.prompt.text);
        report.per_prompt[i] = std::move(score);
    });

    double max_reported = 0.0;
    for (const auto& s : report.per_prompt) max_reported = std::max(max_reported, s.reported);
    if (max_reported <= 1e-15)
        throw std::runtime_error("run_experiment: degenerate ensemble (all uncertainties zero)");

    // quartiles on the reported value; ordering matches eu since the
    // sqrt(d) scaling is a fixed positive constant
    std::vector<double> reported(report.per_prompt.size());
    for (std::size_t i = 0; i < reported.size(); ++i) reported[i] = report.per_prompt[i].reported;
    QuartileAssignment qa = quartile_split(reported);

    std::vector<std::vector<double>> align_groups(4), char_groups(4), word_groups(4);
    for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t idx : qa.members[q]) {
            align_groups[q].push_back(report.per_prompt[idx].alignment);
            char_groups[q].push_back(static_cast<double>(report.per_prompt[idx].char_count));
            word_groups[q].push_back(static_cast<double>(report.per_prompt[idx].word_count));
        }
    report.quartiles.sizes = qa.sizes;
    report.quartiles.upper_bounds = qa.upper_bounds;
    for (std::size_t q = 0; q < 4; ++q) {
        report.quartiles.mean_alignment.push_back(mean_of(align_groups[q]));
        report.quartiles.std_alignment.push_back(std_of(align_groups[q]));
        report.quartiles.mean_chars.push_back(mean_of(char_groups[q]));
        report.quartiles.std_chars.push_back(std_of(char_groups[q]));
        report.quartiles.mean_words.push_back(mean_of(word_groups[q]));
        report.quartiles.std_words.push_back(std_of(word_groups[q]));
    }
    report.jt_alignment_decreasing =
        jonckheere_terpstra(align_groups, TrendDirection::decreasing);

    std::vector<double> in_rep, ood_rep;
    split_reported(report.per_prompt, in_rep, ood_rep);
    if (in_rep.size() >= 2 && ood_rep.size() >= 2)
        report.welch_ood_vs_in = welch_t_test(ood_rep, in_rep);

    std::vector<double> aligns(report.per_prompt.size());
    for (std::size_t i = 0; i < aligns.size(); ++i) aligns[i] = report.per_prompt[i].alignment;
    try {
        report.pearson_reported_alignment = pearson(reported, aligns);
    } catch (const std::invalid_argument&) {
        // zero-variance corner; leave unset
    }
    return report;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    json j;
    j["config_hash"] = report.config_hash;
    j["seed"] = report.seed;
    j["per_prompt"] = json::array();
    for (const auto& s : report.per_prompt) {
        j["per_prompt"].push_back({{"prompt", s.text},
                                   {"language_tag", s.language_tag},
                                   {"split", to_string(s.split)},
                                   {"eu", s.eu},
                                   {"reported", s.reported},
                                   {"alignment", s.alignment},
                                   {"char_count", s.char_count},
                                   {"word_count", s.word_count}});
    }
    j["quartiles"] = {{"sizes", report.quartiles.sizes},
                      {"mean_alignment", report.quartiles.mean_alignment},
                      {"std_alignment", report.quartiles.std_alignment},
                      {"mean_chars", report.quartiles.mean_chars},
                      {"std_chars", report.quartiles.std_chars},
                      {"mean_words", report.quartiles.mean_words},
                      {"std_words", report.quartiles.std_words},
                      {"upper_bounds", report.quartiles.upper_bounds}};
    j["tests"]["jt_alignment_decreasing"] = {
        {"test", report.jt_alignment_decreasing.test_name},
        {"statistic", report.jt_alignment_decreasing.statistic},
        {"z", report.jt_alignment_decreasing.z_score},
        {"p", report.jt_alignment_decreasing.p_value}};
    if (report.welch_ood_vs_in)
        j["tests"]["welch_ood_vs_in"] = {{"test", report.welch_ood_vs_in->test_name},
                                         {"statistic", report.welch_ood_vs_in->statistic},
                                         {"p", report.welch_ood_vs_in->p_value}};
    if (report.pearson_reported_alignment)
        j["tests"]["pearson_reported_alignment"] = *report.pearson_reported_alignment;

    {
        auto out = open_out(dir / "report.json");
        out << j.dump(2) << "\n";
    }

    {
        auto out = open_out(dir / "per_prompt.csv");
        out << "prompt,language_tag,split,eu,reported,alignment,char_count,word_count\n";
        for (const auto& s : report.per_prompt) {
            out << '"' << s.text << "\"," << s.language_tag << ',' << to_string(s.split) << ','
                << fmt(s.eu) << ',' << fmt(s.reported) << ',' << fmt(s.alignment) << ','
                << s.char_count << ',' << s.word_count << "\n";
        }
    }

    {
        auto out = open_out(dir / "quartiles.csv");
        out << "quartile,size,mean_alignment,std_alignment,mean_chars,mean_words,"
               "reported_upper_bound\n";
        for (std::size_t q = 0; q < 4; ++q) {
            out << "Q" << (q + 1) << ',' << report.quartiles.sizes[q] << ','
                << fmt(report.quartiles.mean_alignment[q]) << ','
                << fmt(report.quartiles.std_alignment[q]) << ','
                << fmt(report.quartiles.mean_chars[q]) << ','
                << fmt(report.quartiles.mean_words[q]) << ','
                << fmt(report.quartiles.upper_bounds[q]) << "\n";
        }
    }

    {
        // uncertainty histograms per split, 20 shared bins
        double lo = report.per_prompt.front().reported, hi = lo;
        for (const auto& s : report.per_prompt) {
            lo = std::min(lo, s.reported);
            hi = std::max(hi, s.reported);
        }
        if (hi <= lo) hi = lo + 1.0;
        constexpr int kBins = 20;
        double width = (hi - lo) / kBins;
        std::map<std::string, std::vector<std::size_t>> hist;
        for (const auto& s : report.per_prompt) {
            auto& bins = hist[to_string(s.split)];
            bins.resize(kBins, 0);
            int b = std::min(kBins - 1, static_cast<int>((s.reported - lo) / width));
            ++bins[static_cast<std::size_t>(b)];
        }
        auto out = open_out(dir / "uncertainty_histogram.csv");
        out << "split,bin_lo,bin_hi,count\n";
        for (const auto& [split, bins] : hist)
            for (int b = 0; b < kBins; ++b)
                out << split << ',' << fmt(lo + b * width) << ',' << fmt(lo + (b + 1) * width)
                    << ',' << bins[static_cast<std::size_t>(b)] << "\n";
    }

    {
        auto out = open_out(dir / "scatter.csv");
        out << "reported,alignment,split\n";
        for (const auto& s : report.per_prompt)
            out << fmt(s.reported) << ',' << fmt(s.alignment) << ',' << to_string(s.split)
                << "\n";
    }
}

std::vector<std::vector<std::size_t>> ensemble_sweep_subsets(std::size_t num_experts) {
    if (num_experts < 2)
        throw std::invalid_argument("ensemble_sweep_subsets: need at least 2 experts");
    std::vector<std::vector<std::size_t>> subsets;
    // all subsets of size 2..M-1, then the full set, in mask order
    for (std::size_t size = 2; size < num_experts; ++size) {
        std::vector<bool> pick(num_experts, false);
        std::fill(pick.begin(), pick.begin() + static_cast<long>(size), true);
        // enumerate combinations in lexicographic index order
        std::vector<std::size_t> indices;
        std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t start,
                                                                std::size_t remaining) {
            if (remaining == 0) {
                subsets.push_back(indices);
                return;
            }
            for (std::size_t i = start; i + remaining <= num_experts; ++i) {
                indices.push_back(i);
                rec(i + 1, remaining - 1);
                indices.pop_back();
            }
        };
        rec(0, size);
    }
    std::vector<std::size_t> full(num_experts);
    for (std::size_t i = 0; i < num_experts; ++i) full[i] = i;
    subsets.push_back(full);
    return subsets;
}

std::vector<EnsembleSubsetRow> ensemble_size_sweep(const ExpertBundle& bundle,
                                                   const Corpus& corpus,
                                                   const ExperimentConfig& config) {
    std::vector<EnsembleSubsetRow> rows;
    for (const auto& subset : ensemble_sweep_subsets(bundle.num_experts())) {
        EmoeEngine engine(subset_bundle(bundle, subset));
        std::vector<double> in_rep, ood_rep;
        std::vector<double> reported(corpus.entries.size());
        parallel_for(corpus.entries.size(), config.threads, [&](std::size_t i) {
            reported[i] = engine
                              .estimate_uncertainty(corpus.entries[i].prompt, config.seed,
                                                    UncertaintySpace::mid_post)
                              .reported;
        });
        for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
            if (corpus.entries[i].split == SplitLabel::in_dist)
                in_rep.push_back(reported[i]);
            else
                ood_rep.push_back(reported[i]);
        }
        EnsembleSubsetRow row;
        row.experts = subset;
        row.mean_reported_in = mean_of(in_rep);
        row.mean_reported_ood = mean_of(ood_rep);
        if (in_rep.size() >= 2 && ood_rep.size() >= 2)
            row.welch_p = welch_t_test(ood_rep, in_rep).p_value;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<StepSeriesRow> denoising_step_series(const EmoeEngine& engine, const Corpus& corpus,
                                                 const ExperimentConfig& config) {
    int steps = engine.bundle().schedule.steps;
    std::vector<std::vector<SeparationEstimates>> series(corpus.entries.size());
    parallel_for(corpus.entries.size(), config.threads, [&](std::size_t i) {
        series[i] = engine.estimate_per_step_series(corpus.entries[i].prompt, config.seed);
    });
    std::vector<StepSeriesRow> rows;
    for (int t = steps; t >= 1; --t) {
        std::size_t k = static_cast<std::size_t>(steps - t);
        std::vector<double> in_rep, ood_rep;
        for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
            double v = series[i][k].mid_post.reported;
            if (corpus.entries[i].split == SplitLabel::in_dist)
                in_rep.push_back(v);
            else
                ood_rep.push_back(v);
        }
        rows.push_back({t, mean_of(in_rep), mean_of(ood_rep)});
    }
    return rows;
}

std::vector<SpaceSummaryRow> latent_space_summary(const EmoeEngine& engine, const Corpus& corpus,
                                                  const ExperimentConfig& config) {
    std::vector<SeparationEstimates> all(corpus.entries.size());
    parallel_for(corpus.entries.size(), config.threads, [&](std::size_t i) {
        all[i] = engine.estimate_all_spaces(corpus.entries[i].prompt, config.seed);
    });
    std::vector<SpaceSummaryRow> rows;
    for (UncertaintySpace space :
         {UncertaintySpace::mid_post, UncertaintySpace::mid_pre, UncertaintySpace::z_next}) {
        std::vector<double> in_rep, ood_rep;
        for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
            double v = all[i].get(space).reported;
            if (corpus.entries[i].split == SplitLabel::in_dist)
                in_rep.push_back(v);
            else
                ood_rep.push_back(v);
        }
        SpaceSummaryRow row;
        row.space = space;
        row.mean_reported_in = mean_of(in_rep);
        row.mean_reported_ood = mean_of(ood_rep);
        if (in_rep.size() >= 2 && ood_rep.size() >= 2)
            row.welch_p = welch_t_test(ood_rep, in_rep).p_value;
        rows.push_back(row);
    }
    return rows;
}

void write_ensemble_sweep_csv(const std::vector<EnsembleSubsetRow>& rows,
                              const std::filesystem::path& file) {
    auto out = open_out(file);
    out << "experts,size,mean_reported_in,mean_reported_ood,welch_p\n";
    for (const auto& r : rows) {
        std::string label;
        for (std::size_t i = 0; i < r.experts.size(); ++i)
            label += (i ? "+" : "") + std::to_string(r.experts[i]);
        out << label << ',' << r.experts.size() << ',' << fmt(r.mean_reported_in) << ','
            << fmt(r.mean_reported_ood) << ',' << fmt(r.welch_p) << "\n";
    }
}

void write_step_series_csv(const std::vector<StepSeriesRow>& rows,
                           const std::filesystem::path& file) {
    auto out = open_out(file);
    out << "t,mean_reported_in,mean_reported_ood\n";
    for (const auto& r : rows)
        out << r.t << ',' << fmt(r.mean_reported_in) << ',' << fmt(r.mean_reported_ood) << "\n";
}

void write_space_summary_csv(const std::vector<SpaceSummaryRow>& rows,
                             const std::filesystem::path& file) {
    auto out = open_out(file);
    out << "space,mean_reported_in,mean_reported_ood,welch_p\n";
    for (const auto& r : rows)
        out << to_string(r.space) << ',' << fmt(r.mean_reported_in) << ','
            << fmt(r.mean_reported_ood) << ',' << fmt(r.welch_p) << "\n";
}

}  // namespace emoe
