#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "emoe/experiments.hpp"
#include "emoe/gp_probe.hpp"
#include "emoe/synthetic.hpp"

using namespace emoe;
namespace fs = std::filesystem;

namespace {

ExpertBundle random_bundle(std::uint64_t seed, std::size_t m, bool identical = false) {
    UNetGeometry g;
    g.timesteps = 5;
    RngStream s(seed, 0xE);
    ExpertBundle b;
    b.weights = init_unet(g, m, s);
    if (identical)
        for (std::size_t i = 1; i < m; ++i) copy_expert(b.weights, i, b.weights, 0);
    b.schedule = build_schedule(5, 1e-3, 0.05);
    for (std::size_t i = 0; i < m; ++i)
        b.descriptors.push_back({"red square " + std::to_string(i), "blue circle"});
    b.top_n = std::min<std::size_t>(2, m);
    return b;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("vocabulary and grammar basics") {
    CHECK(vocabulary().size() == 20);
    CHECK(color_words().size() == 4);
    CHECK(shape_words().size() == 5);
    CHECK(modifier_words().size() == 11);
    for (std::size_t k = 0; k < 100; ++k) {
        std::string w = unseen_word(k);
        CHECK(std::find(vocabulary().begin(), vocabulary().end(), w) == vocabulary().end());
    }
}

TEST_CASE("prompt parsing recovers grammar semantics") {
    PromptSemantics sem = parse_prompt({"a gold star bright tiny", "en"});
    CHECK(sem.color == 3);
    CHECK(sem.shape == 3);
    CHECK(sem.modifiers == std::vector<std::size_t>{2, 6});

    // unknown words are ignored, pre-remap semantics survive
    PromptSemantics noisy = parse_prompt({"a red zq1 circle zq2", "xx-remap"});
    CHECK(noisy.color == 0);
    CHECK(noisy.shape == 1);
    CHECK(noisy.modifiers.empty());

    CHECK_THROWS_AS(parse_prompt({"a bright thing", "en"}), std::invalid_argument);
}

TEST_CASE("true mean latents differ by shape and color, modifiers tweak them") {
    UNetGeometry g;
    Tensor red_square = true_mean_latent(Prompt{"a red square", "en"}, g);
    Tensor blue_square = true_mean_latent(Prompt{"a blue square", "en"}, g);
    Tensor red_star = true_mean_latent(Prompt{"a red star", "en"}, g);
    Tensor red_square_bright = true_mean_latent(Prompt{"a red square bright", "en"}, g);
    CHECK_FALSE(red_square == blue_square);
    CHECK_FALSE(red_square == red_star);
    // brightness raises the amplitude
    double sum_plain = 0.0, sum_bright = 0.0;
    for (std::size_t i = 0; i < red_square.size(); ++i) {
        sum_plain += red_square[i];
        sum_bright += red_square_bright[i];
    }
    CHECK(sum_bright > sum_plain);
    // determinism
    CHECK(true_mean_latent(Prompt{"a red square", "en"}, g) == red_square);
}

TEST_CASE("make_corpus splits, determinism and vocabulary discipline") {
    CorpusConfig cfg{8, 5, 6, 3, "xx-remap"};
    Corpus a = make_corpus(cfg, 42);
    Corpus b = make_corpus(cfg, 42);
    REQUIRE(a.entries.size() == 19);
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].prompt.text == b.entries[i].prompt.text);
        CHECK(a.entries[i].split == b.entries[i].split);
    }

    std::set<std::string> known(vocabulary().begin(), vocabulary().end());
    known.insert("a");
    std::size_t n_in = 0, n_remap = 0, n_unseen = 0;
    for (const auto& e : a.entries) {
        std::string word;
        std::vector<std::string> words;
        for (char c : e.prompt.text + " ")
            if (c == ' ') {
                if (!word.empty()) words.push_back(word);
                word.clear();
            } else {
                word.push_back(c);
            }
        switch (e.split) {
            case SplitLabel::in_dist:
                ++n_in;
                CHECK(e.prompt.language_tag == "en");
                for (const auto& w : words) CHECK(known.count(w) == 1);
                break;
            case SplitLabel::ood_remap:
                ++n_remap;
                CHECK(e.prompt.language_tag == "xx-remap");
                break;
            case SplitLabel::ood_unseen_token: {
                ++n_unseen;
                std::size_t unknown = 0;
                for (const auto& w : words) unknown += known.count(w) == 0;
                CHECK(unknown >= 1);
                CHECK(unknown <= 3);
                break;
            }
        }
    }
    CHECK(n_in == 8);
    CHECK(n_remap == 5);
    CHECK(n_unseen == 6);

    CHECK_THROWS_AS(make_corpus({0, 0, 0, 3, "xx-remap"}, 1), std::invalid_argument);
}

TEST_CASE("remapped prompts tokenize to ids disjoint from training ids") {
    Corpus corpus = make_corpus({20, 20, 0, 3, "xx-remap"}, 7);
    std::set<std::uint64_t> train_ids;
    for (const auto& e : corpus.entries)
        if (e.split == SplitLabel::in_dist)
            for (auto id : tokenize(e.prompt)) train_ids.insert(id);
    for (const auto& e : corpus.entries)
        if (e.split == SplitLabel::ood_remap)
            for (auto id : tokenize(e.prompt)) CHECK(train_ids.count(id) == 0);
}

TEST_CASE("alignment proxy peaks at the true mean and decays monotonically") {
    UNetGeometry g;
    Prompt p{"a green triangle large", "en"};
    Tensor mu = true_mean_latent(p, g);
    CHECK(alignment_score(mu, p, g) == 0.0);

    RngStream s(9, 9);
    Tensor direction = gaussian(s, mu.shape());
    double prev = 0.0;
    for (int k = 1; k <= 5; ++k) {
        Tensor z = mu;
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += 0.2 * k * direction[i];
        double score = alignment_score(z, p, g);
        CHECK(score < prev);
        prev = score;
    }

    // 1000 random latents all score strictly below the true mean
    for (int trial = 0; trial < 1000; ++trial) {
        Tensor z = gaussian(s, mu.shape());
        CHECK(alignment_score(z, p, g) < 0.0);
    }

    CHECK_THROWS_AS(alignment_score(mu, Prompt{"a bright nothing", "en"}, g),
                    std::invalid_argument);
}

TEST_CASE("gp probe: reference prefix reproduces itself and errors shrink") {
    GpProbeResult res = gp_convergence_probe({2, 16, 256, kGpReferenceSize}, 5);
    REQUIRE(res.rows.size() == 4);
    CHECK(res.rows[3].mean_abs_error == 0.0);
    CHECK(res.rows[3].var_rel_error == 0.0);
    CHECK(res.reference_var > 0.0);

    // median-smoothed across 20 seeds: errors decrease monotonically in N
    std::vector<std::size_t> sizes = {2, 8, 32, 128};
    std::vector<std::vector<double>> errs(sizes.size());
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        GpProbeResult r = gp_convergence_probe(sizes, seed);
        for (std::size_t i = 0; i < sizes.size(); ++i)
            errs[i].push_back(r.rows[i].mean_abs_error);
    }
    std::vector<double> medians;
    for (auto& e : errs) {
        std::sort(e.begin(), e.end());
        medians.push_back(0.5 * (e[9] + e[10]));
    }
    for (std::size_t i = 1; i < medians.size(); ++i) CHECK(medians[i] < medians[i - 1]);

    CHECK_THROWS_AS(gp_convergence_probe({1, 4}, 0), std::invalid_argument);
    CHECK_THROWS_AS(gp_convergence_probe({}, 0), std::invalid_argument);
    CHECK_THROWS_AS(gp_convergence_probe({20000}, 0), std::invalid_argument);
}

TEST_CASE("ensemble sweep enumerates all 11 subsets for M=4") {
    auto subsets = ensemble_sweep_subsets(4);
    REQUIRE(subsets.size() == 11);
    std::set<std::vector<std::size_t>> unique(subsets.begin(), subsets.end());
    CHECK(unique.size() == 11);
    std::size_t n2 = 0, n3 = 0, n4 = 0;
    for (const auto& s : subsets) {
        if (s.size() == 2) ++n2;
        if (s.size() == 3) ++n3;
        if (s.size() == 4) ++n4;
        for (std::size_t i : s) CHECK(i < 4);
    }
    CHECK(n2 == 6);
    CHECK(n3 == 4);
    CHECK(n4 == 1);

    CHECK(ensemble_sweep_subsets(2).size() == 1);
}

TEST_CASE("run_experiment wires scoring, quartiles and tests together") {
    ExpertBundle bundle = random_bundle(3, 3);
    EmoeEngine engine(bundle);
    Corpus corpus = make_corpus({12, 12, 0, 3, "xx-remap"}, 11);
    ExperimentConfig cfg{11, 2, "cafebabe"};
    ExperimentReport report = run_experiment(engine, corpus, cfg);

    CHECK(report.per_prompt.size() == 24);
    CHECK(report.config_hash == "cafebabe");
    std::size_t total = 0;
    for (std::size_t q = 0; q < 4; ++q) total += report.quartiles.sizes[q];
    CHECK(total == 24);
    CHECK(report.welch_ood_vs_in.has_value());
    CHECK(report.jt_alignment_decreasing.p_value >= 0.0);
    CHECK(report.jt_alignment_decreasing.p_value <= 1.0);
    for (const auto& s : report.per_prompt) {
        CHECK(s.eu >= 0.0);
        CHECK(std::isfinite(s.alignment));
        CHECK(s.reported >= 0.0);
    }

    // threads must not change results
    ExperimentConfig cfg1{11, 1, "cafebabe"};
    ExperimentReport serial = run_experiment(engine, corpus, cfg1);
    for (std::size_t i = 0; i < serial.per_prompt.size(); ++i) {
        CHECK(serial.per_prompt[i].reported == report.per_prompt[i].reported);
        CHECK(serial.per_prompt[i].alignment == report.per_prompt[i].alignment);
    }
}

TEST_CASE("identical experts abort the experiment as degenerate") {
    ExpertBundle bundle = random_bundle(4, 3, /*identical=*/true);
    EmoeEngine engine(bundle);
    Corpus corpus = make_corpus({6, 6, 0, 3, "xx-remap"}, 2);
    CHECK_THROWS_WITH_AS(run_experiment(engine, corpus, {2, 1, "x"}),
                         doctest::Contains("degenerate ensemble"), std::runtime_error);
}

TEST_CASE("reports serialize byte-identically under a fixed seed") {
    ExpertBundle bundle = random_bundle(5, 2);
    EmoeEngine engine(bundle);
    Corpus corpus = make_corpus({8, 8, 0, 3, "xx-remap"}, 13);
    ExperimentConfig cfg{13, 1, "deadbeef"};
    ExperimentReport report = run_experiment(engine, corpus, cfg);

    fs::path dir_a = fs::temp_directory_path() / "emoe_report_a";
    fs::path dir_b = fs::temp_directory_path() / "emoe_report_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    write_report(report, dir_a);
    write_report(run_experiment(engine, corpus, cfg), dir_b);
    for (const char* name : {"report.json", "per_prompt.csv", "quartiles.csv",
                             "uncertainty_histogram.csv", "scatter.csv"}) {
        CHECK(slurp(dir_a / name) == slurp(dir_b / name));
        CHECK(slurp(dir_a / name).find('\r') == std::string::npos);  // LF endings
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("ablation sweeps produce consistent tables") {
    ExpertBundle bundle = random_bundle(6, 4);
    Corpus corpus = make_corpus({5, 5, 0, 3, "xx-remap"}, 17);
    ExperimentConfig cfg{17, 2, "h"};

    auto sweep = ensemble_size_sweep(bundle, corpus, cfg);
    REQUIRE(sweep.size() == 11);
    for (const auto& row : sweep) {
        CHECK(row.mean_reported_in >= 0.0);
        CHECK(row.mean_reported_ood >= 0.0);
    }

    EmoeEngine engine(bundle);
    auto series = denoising_step_series(engine, corpus, cfg);
    REQUIRE(series.size() == 5);
    CHECK(series.front().t == 5);
    CHECK(series.back().t == 1);

    auto spaces = latent_space_summary(engine, corpus, cfg);
    REQUIRE(spaces.size() == 3);
    CHECK(spaces[0].space == UncertaintySpace::mid_post);

    fs::path dir = fs::temp_directory_path() / "emoe_ablate_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_ensemble_sweep_csv(sweep, dir / "sweep.csv");
    write_step_series_csv(series, dir / "steps.csv");
    write_space_summary_csv(spaces, dir / "spaces.csv");
    CHECK(slurp(dir / "sweep.csv").starts_with("experts,size"));
    CHECK(slurp(dir / "steps.csv").starts_with("t,"));
    CHECK(slurp(dir / "spaces.csv").starts_with("space,"));
    fs::remove_all(dir);
}
