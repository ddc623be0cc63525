#include "emoe/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace emoe {

namespace {

const std::vector<std::string> kColors = {"red", "blue", "green", "gold"};
const std::vector<std::string> kShapes = {"square", "circle", "triangle", "star", "hexagon"};
const std::vector<std::string> kModifiers = {"small", "large", "bright", "dark",  "fuzzy", "smooth",
                                             "tiny",  "huge",  "pale",   "vivid", "old"};

// fractional bump centers per shape, (fx, fy)
const double kCenters[5][2] = {{0.25, 0.25}, {0.65, 0.25}, {0.25, 0.65}, {0.65, 0.65},
                               {0.45, 0.45}};

// channel mix per color for the first two channels
const double kChannelMix[4][2] = {{1.0, 0.1}, {0.1, 1.0}, {0.7, 0.4}, {0.4, 0.7}};

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string w;
    for (char c : text) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc)) {
            w.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!w.empty()) {
            words.push_back(w);
            w.clear();
        }
    }
    if (!w.empty()) words.push_back(w);
    return words;
}

long index_of(const std::vector<std::string>& list, const std::string& word) {
    auto it = std::find(list.begin(), list.end(), word);
    return it == list.end() ? -1 : static_cast<long>(it - list.begin());
}

}  // namespace

const std::vector<std::string>& color_words() { return kColors; }
const std::vector<std::string>& shape_words() { return kShapes; }
const std::vector<std::string>& modifier_words() { return kModifiers; }

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> all = [] {
        std::vector<std::string> v;
        v.insert(v.end(), kColors.begin(), kColors.end());
        v.insert(v.end(), kShapes.begin(), kShapes.end());
        v.insert(v.end(), kModifiers.begin(), kModifiers.end());
        return v;
    }();
    return all;
}

std::string unseen_word(std::size_t k) { return "zq" + std::to_string(k); }

PromptSemantics parse_prompt(const Prompt& prompt) {
    PromptSemantics sem;
    bool have_color = false, have_shape = false;
    for (const auto& w : split_words(prompt.text)) {
        long ci = index_of(kColors, w);
        if (ci >= 0 && !have_color) {
            sem.color = static_cast<std::size_t>(ci);
            have_color = true;
            continue;
        }
        long si = index_of(kShapes, w);
        if (si >= 0 && !have_shape) {
            sem.shape = static_cast<std::size_t>(si);
            have_shape = true;
            continue;
        }
        long mi = index_of(kModifiers, w);
        if (mi >= 0) sem.modifiers.push_back(static_cast<std::size_t>(mi));
    }
    if (!have_color || !have_shape)
        throw std::invalid_argument("parse_prompt: no color/shape word in \"" + prompt.text +
                                    "\"");
    return sem;
}

Tensor true_mean_latent(const PromptSemantics& sem, const UNetGeometry& geom) {
    double amp = 1.0;
    double width = 0.2 * static_cast<double>(std::min(geom.latent_h, geom.latent_w));
    for (std::size_t m : sem.modifiers) {
        switch (m) {
            case 0: width *= 0.80; break;  // small
            case 1: width *= 1.25; break;  // large
            case 2: amp += 0.30; break;    // bright
            case 3: amp -= 0.30; break;    // dark
            case 4: width *= 1.10; break;  // fuzzy
            case 5: width *= 0.95; break;  // smooth
            case 6: width *= 0.65; break;  // tiny
            case 7: width *= 1.40; break;  // huge
            case 8: amp -= 0.15; break;    // pale
            case 9: amp += 0.15; break;    // vivid
            case 10: amp -= 0.10; break;   // old
            default: throw std::invalid_argument("true_mean_latent: bad modifier index");
        }
    }
    double cx = kCenters[sem.shape][0] * static_cast<double>(geom.latent_w - 1);
    double cy = kCenters[sem.shape][1] * static_cast<double>(geom.latent_h - 1);
    double inv_two_w2 = 1.0 / (2.0 * width * width);
    Tensor mu({geom.latent_c, geom.latent_h, geom.latent_w});
    for (std::size_t c = 0; c < geom.latent_c; ++c) {
        double cw = kChannelMix[sem.color][c % 2] * (c < 2 ? 1.0 : 0.25);
        for (std::size_t y = 0; y < geom.latent_h; ++y)
            for (std::size_t x = 0; x < geom.latent_w; ++x) {
                double dx = static_cast<double>(x) - cx;
                double dy = static_cast<double>(y) - cy;
                mu.at(c, y, x) = amp * cw * std::exp(-(dx * dx + dy * dy) * inv_two_w2);
            }
    }
    return mu;
}

Tensor true_mean_latent(const Prompt& prompt, const UNetGeometry& geom) {
    return true_mean_latent(parse_prompt(prompt), geom);
}

Prompt sample_prompt(RngStream& stream) {
    std::string text = "a " + kColors[stream.next_below(kColors.size())] + " " +
                       kShapes[stream.next_below(kShapes.size())];
    std::size_t n_mods = stream.next_below(4);
    std::vector<std::size_t> pool(kModifiers.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    for (std::size_t k = 0; k < n_mods; ++k) {
        std::size_t pick = k + stream.next_below(pool.size() - k);
        std::swap(pool[k], pool[pick]);
        text += " " + kModifiers[pool[k]];
    }
    return Prompt{text, "en"};
}

std::vector<TrainingExample> make_dataset(std::size_t n, double noise_sigma,
                                          const UNetGeometry& geom, RngStream stream) {
    if (n == 0) throw std::invalid_argument("make_dataset: size 0");
    std::vector<TrainingExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Prompt p = sample_prompt(stream);
        Tensor z0 = true_mean_latent(p, geom);
        Tensor eps = gaussian(stream, z0.shape());
        for (std::size_t j = 0; j < z0.size(); ++j) z0[j] += noise_sigma * eps[j];
        out.push_back({std::move(p), std::move(z0)});
    }
    return out;
}

}  // namespace emoe
