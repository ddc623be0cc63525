#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emoe/synthetic.hpp"
#include "emoe/text_encoder.hpp"

namespace emoe {

enum class SplitLabel { in_dist, ood_remap, ood_unseen_token };

std::string to_string(SplitLabel label);

struct CorpusEntry {
    Prompt prompt;
    SplitLabel split;
};

struct Corpus {
    std::vector<CorpusEntry> entries;
};

struct CorpusConfig {
    std::size_t in_dist = 200;
    std::size_t ood_remap = 200;
    std::size_t ood_unseen = 0;
    // perturbed prompts carry 1..max_unseen_insertions out-of-vocabulary
    // words appended after the grammar part
    std::size_t max_unseen_insertions = 3;
    std::string remap_tag = "xx-remap";
};

// Deterministic corpus over the synthetic grammar. in_dist prompts use only
// training vocabulary; ood_remap prompts share the grammar but tokenize
// through a remapped id space; ood_unseen_token prompts append unseen words.
Corpus make_corpus(const CorpusConfig& config, std::uint64_t seed);

// Alignment proxy: negative squared distance between z0 and the synthetic
// generative process's true mean latent for the prompt. Zero is the maximum.
// OOD prompts are scored against their pre-remap grammar semantics.
double alignment_score(const Tensor& z0, const Prompt& prompt, const UNetGeometry& geom);

}  // namespace emoe
