#include "emoe/text_encoder.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

#include "emoe/rng.hpp"

namespace emoe {

namespace {

// Fixed salt keeps embeddings independent of any run seed.
constexpr std::uint64_t kEmbedRoot = 0x454d6f4532303234ULL;

std::uint64_t remap_constant(const std::string& tag) {
    return mix64(fnv1a64(tag) ^ 0xa5a5a5a5deadbeefULL);
}

}  // namespace

std::vector<std::uint64_t> tokenize(const Prompt& prompt) {
    std::vector<std::uint64_t> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            if (ids.size() < kMaxTokens) ids.push_back(fnv1a64(word));
            word.clear();
        }
    };
    for (char c : prompt.text) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            word.push_back(static_cast<char>(std::tolower(uc)));
        } else {
            flush();
        }
    }
    flush();
    if (ids.empty()) throw std::invalid_argument("tokenize: empty text");
    if (prompt.language_tag != "en") {
        std::uint64_t mask = remap_constant(prompt.language_tag);
        for (auto& id : ids) id ^= mask;
    }
    return ids;
}

std::vector<double> token_embedding(std::uint64_t id, std::size_t d_txt) {
    if (d_txt == 0) throw std::invalid_argument("token_embedding: d_txt == 0");
    RngStream stream(kEmbedRoot, id);
    std::vector<double> row(d_txt);
    double norm_sq = 0.0;
    for (auto& v : row) {
        v = stream.next_gaussian();
        norm_sq += v * v;
    }
    double inv = 1.0 / std::sqrt(norm_sq);
    for (auto& v : row) v *= inv;
    return row;
}

PromptEmbedding embed(const std::vector<std::uint64_t>& token_ids, std::size_t d_txt) {
    if (token_ids.empty()) throw std::invalid_argument("embed: no tokens");
    std::size_t n = token_ids.size();
    PromptEmbedding out{Tensor({n, d_txt}), Tensor({d_txt})};
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row = token_embedding(token_ids[i], d_txt);
        for (std::size_t j = 0; j < d_txt; ++j) {
            out.tokens.at(i, j) = row[j];
            out.pooled[j] += row[j] / static_cast<double>(n);
        }
    }
    return out;
}

PromptEmbedding embed_prompt(const Prompt& prompt, std::size_t d_txt) {
    return embed(tokenize(prompt), d_txt);
}

GateVector gate_vector(const ExpertDescriptor& descriptor, std::size_t d_txt) {
    if (descriptor.positive.empty() || descriptor.negative.empty())
        throw std::invalid_argument("gate_vector: descriptor strings must be nonempty");
    PromptEmbedding pos = embed_prompt({descriptor.positive, "en"}, d_txt);
    PromptEmbedding neg = embed_prompt({descriptor.negative, "en"}, d_txt);
    GateVector gv{Tensor({2 * d_txt})};
    for (std::size_t j = 0; j < d_txt; ++j) {
        gv.v[j] = pos.pooled[j];
        gv.v[d_txt + j] = neg.pooled[j];
    }
    return gv;
}

}  // namespace emoe
