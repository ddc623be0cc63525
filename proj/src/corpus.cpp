#include "emoe/corpus.hpp"

#include <stdexcept>

namespace emoe {

namespace {

constexpr std::uint64_t kCorpusStream = 0x05;
constexpr std::size_t kUnseenPool = 100;

}  // namespace

std::string to_string(SplitLabel label) {
    switch (label) {
        case SplitLabel::in_dist: return "in_dist";
        case SplitLabel::ood_remap: return "ood_remap";
        case SplitLabel::ood_unseen_token: return "ood_unseen_token";
    }
    throw std::invalid_argument("to_string: bad SplitLabel");
}

Corpus make_corpus(const CorpusConfig& config, std::uint64_t seed) {
    std::size_t total = config.in_dist + config.ood_remap + config.ood_unseen;
    if (total == 0) throw std::invalid_argument("make_corpus: size 0");
    if (config.ood_unseen > 0 && config.max_unseen_insertions == 0)
        throw std::invalid_argument("make_corpus: max_unseen_insertions must be >= 1");

    RngStream stream(seed, kCorpusStream);
    Corpus corpus;
    corpus.entries.reserve(total);
    for (std::size_t i = 0; i < config.in_dist; ++i)
        corpus.entries.push_back({sample_prompt(stream), SplitLabel::in_dist});
    for (std::size_t i = 0; i < config.ood_remap; ++i) {
        Prompt p = sample_prompt(stream);
        p.language_tag = config.remap_tag;
        corpus.entries.push_back({std::move(p), SplitLabel::ood_remap});
    }
    for (std::size_t i = 0; i < config.ood_unseen; ++i) {
        Prompt p = sample_prompt(stream);
        std::size_t k = 1 + stream.next_below(config.max_unseen_insertions);
        for (std::size_t j = 0; j < k; ++j)
            p.text += " " + unseen_word(stream.next_below(kUnseenPool));
        corpus.entries.push_back({std::move(p), SplitLabel::ood_unseen_token});
    }
    return corpus;
}

double alignment_score(const Tensor& z0, const Prompt& prompt, const UNetGeometry& geom) {
    Tensor mu = true_mean_latent(prompt, geom);
    if (!z0.same_shape(mu))
        throw std::invalid_argument("alignment_score: latent shape " + shape_string(z0.shape()) +
                                    " does not match geometry");
    double dist_sq = 0.0;
    for (std::size_t i = 0; i < z0.size(); ++i) {
        double d = z0[i] - mu[i];
        dist_sq += d * d;
    }
    return -dist_sq;
}

}  // namespace emoe
