#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emoe/tensor.hpp"

namespace emoe {

// Prompts tagged "en" tokenize to plain hash ids; any other tag XORs every id
// with a tag-derived constant, simulating a foreign vocabulary the model has
// never seen.
struct Prompt {
    std::string text;
    std::string language_tag = "en";
};

// Token-level encoder output. pooled is the arithmetic mean of token rows.
struct PromptEmbedding {
    Tensor tokens;  // L x d_txt, each row unit L2 norm
    Tensor pooled;  // d_txt
};

// Positive/negative descriptor pair characterizing one expert.
struct ExpertDescriptor {
    std::string positive;
    std::string negative;
};

// Concatenation [pooled(positive); pooled(negative)].
struct GateVector {
    Tensor v;  // 2 * d_txt
};

// Reserved id standing in for an absent negative prompt.
inline constexpr std::uint64_t kNullTokenId = 0;

// Token count cap; longer prompts are truncated.
inline constexpr std::size_t kMaxTokens = 32;

// Lowercased whitespace/punctuation split, each token hashed to a stable
// 64-bit id. Throws on text that is empty after trimming.
std::vector<std::uint64_t> tokenize(const Prompt& prompt);

// Deterministic hash-seeded embedding: each id seeds a Gaussian d_txt row,
// unit-normalized; pooled = mean of rows. Requires at least one token.
PromptEmbedding embed(const std::vector<std::uint64_t>& token_ids, std::size_t d_txt);

PromptEmbedding embed_prompt(const Prompt& prompt, std::size_t d_txt);

// Single unit-normalized embedding row for one token id.
std::vector<double> token_embedding(std::uint64_t id, std::size_t d_txt);

GateVector gate_vector(const ExpertDescriptor& descriptor, std::size_t d_txt);

}  // namespace emoe
