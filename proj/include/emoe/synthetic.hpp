#pragma once

#include <string>
#include <vector>

#include "emoe/rng.hpp"
#include "emoe/tensor.hpp"
#include "emoe/text_encoder.hpp"
#include "emoe/unet.hpp"

namespace emoe {

// Fixed 20-word content vocabulary behind the prompt grammar
// "a {color} {shape} {modifier...}".
const std::vector<std::string>& color_words();     // 4
const std::vector<std::string>& shape_words();     // 5
const std::vector<std::string>& modifier_words();  // 11
const std::vector<std::string>& vocabulary();      // all 20

// Deterministic out-of-vocabulary word, disjoint from the vocabulary.
std::string unseen_word(std::size_t k);

struct PromptSemantics {
    std::size_t color = 0;
    std::size_t shape = 0;
    std::vector<std::size_t> modifiers;  // in order of appearance
};

// Recovers grammar semantics from prompt text. Unknown words are ignored;
// throws if no color or no shape word is present.
PromptSemantics parse_prompt(const Prompt& prompt);

// The synthetic generative process: a prompt-conditioned Gaussian bump.
// Shape picks the bump center, color the channel mix, modifiers tweak
// amplitude and width. This is the exact ground-truth target the alignment
// proxy scores against.
Tensor true_mean_latent(const PromptSemantics& sem, const UNetGeometry& geom);
Tensor true_mean_latent(const Prompt& prompt, const UNetGeometry& geom);

// In-distribution grammar sample with 0..3 distinct modifiers.
Prompt sample_prompt(RngStream& stream);

struct TrainingExample {
    Prompt prompt;
    Tensor z0;
};

// n examples with z0 = true_mean(prompt) + noise_sigma * eps.
std::vector<TrainingExample> make_dataset(std::size_t n, double noise_sigma,
                                          const UNetGeometry& geom, RngStream stream);

}  // namespace emoe
