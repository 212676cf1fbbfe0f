#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "util.hpp"

namespace hyperpersona {

/// Planted-signal corpus: each trait is positive iff at least `threshold` of
/// its marker tokens occur in the document. Every other token is drawn from a
/// distractor vocabulary that never contains a marker.
struct SyntheticSpec {
    std::size_t size = 200;
    std::uint64_t seed = 0;
    /// Hash-embedding width used when the corpus is embedded.
    std::size_t dim = 96;
    std::size_t min_sentences = 3, max_sentences = 3;
    std::size_t min_words = 7, max_words = 7;
    std::size_t vocabulary = 300;
    std::size_t threshold = 2;
    /// Marker count drawn for a positive document, inclusive range.
    std::size_t positive_min = 4, positive_max = 8;
    std::array<std::vector<std::string>, 5> markers = {{
        {"curious", "imaginative", "artistic"},
        {"organized", "diligent", "punctual"},
        {"outgoing", "talkative", "energetic"},
        {"kind", "trusting", "helpful"},
        {"anxious", "moody", "worried"},
    }};
};

namespace detail {

inline std::vector<std::string> distractor_vocabulary(std::size_t n, RngStream rng) {
    static constexpr std::array<const char*, 14> consonants = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    static constexpr std::array<const char*, 5> vowels = {"a", "e", "i", "o", "u"};
    std::vector<std::string> out;
    std::set<std::string> seen;
    while (out.size() < n) {
        const std::size_t syllables = 2 + rng.below(2);
        std::string w;
        for (std::size_t s = 0; s < syllables; ++s) {
            w += consonants[rng.below(consonants.size())];
            w += vowels[rng.below(vowels.size())];
        }
        if (seen.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

inline std::size_t in_range(RngStream& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

}  // namespace detail

/// Labels are exactly balanced per trait (floor(size/2) positives).
[[nodiscard]] inline std::vector<EssayRecord> make_synthetic_corpus(const SyntheticSpec& spec) {
    if (spec.size < 20) throw ConfigError("synthetic corpus needs at least 20 documents");
    if (spec.threshold < 1 || spec.positive_min < spec.threshold || spec.positive_max < spec.positive_min)
        throw ConfigError("synthetic marker counts must satisfy 1 <= threshold <= positive_min <= positive_max");
    if (spec.min_sentences < 1 || spec.max_sentences < spec.min_sentences || spec.min_words < 1 || spec.max_words < spec.min_words)
        throw ConfigError("synthetic sentence/word ranges are invalid");

    const RngStream root(spec.seed);
    const auto vocab = detail::distractor_vocabulary(spec.vocabulary, root.split(1));

    std::array<std::vector<char>, 5> labels;
    for (Trait t : kAllTraits) {
        auto& l = labels[static_cast<int>(t)];
        l.assign(spec.size, 0);
        std::fill(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(spec.size / 2), 1);
        RngStream r = root.split(2).split(static_cast<std::uint64_t>(t));
        shuffle_in_place(l, r);
    }

    std::vector<EssayRecord> out;
    for (std::size_t d = 0; d < spec.size; ++d) {
        RngStream rng = root.split(3).split(d);
        std::vector<std::vector<std::string>> sentences(detail::in_range(rng, spec.min_sentences, spec.max_sentences));
        for (auto& s : sentences) {
            s.resize(detail::in_range(rng, spec.min_words, spec.max_words));
            for (auto& w : s) w = vocab[rng.below(vocab.size())];
        }
        EssayRecord rec;
        rec.id = "syn" + std::to_string(d);
        for (Trait t : kAllTraits) {
            const bool positive = labels[static_cast<int>(t)][d] != 0;
            rec.labels.set(t, positive);
            const std::size_t count = positive ? detail::in_range(rng, spec.positive_min, spec.positive_max)
                                               : rng.below(spec.threshold);
            const auto& m = spec.markers[static_cast<int>(t)];
            for (std::size_t i = 0; i < count; ++i) {
                auto& s = sentences[rng.below(sentences.size())];
                s.insert(s.begin() + static_cast<std::ptrdiff_t>(rng.below(s.size() + 1)), m[rng.below(m.size())]);
            }
        }
        for (const auto& s : sentences) {
            if (!rec.text.empty()) rec.text += ' ';
            for (std::size_t i = 0; i < s.size(); ++i) {
                std::string w = s[i];
                if (i == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
                rec.text += (i ? " " : "") + w;
            }
            rec.text += '.';
        }
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace hyperpersona
