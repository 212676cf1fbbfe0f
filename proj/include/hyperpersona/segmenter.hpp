#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

#include "corpus.hpp"
#include "util.hpp"

namespace hyperpersona {

struct Sentence {
    std::size_t index = 0;  // 1-based
    std::string text;
    std::vector<std::string> words;
    friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct SegmentedDocument {
    std::string doc_id;
    std::vector<Sentence> sentences;

    [[nodiscard]] std::size_t word_count() const noexcept {
        std::size_t n = 0;
        for (const auto& s : sentences) n += s.words.size();
        return n;
    }
    friend bool operator==(const SegmentedDocument&, const SegmentedDocument&) = default;
};

struct SegmenterConfig {
    /// Tokens (lowercase, including the trailing period) that do not end a
    /// sentence even when followed by whitespace.
    std::vector<std::string> abbreviations = {"mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.",
                                              "st.", "vs.", "e.g.", "i.e.", "etc.", "no.", "a.m.",
                                              "p.m.", "u.s."};
};

struct SkippedRecord {
    std::string doc_id;
    std::string reason;
};

struct SegmentationResult {
    std::vector<SegmentedDocument> documents;
    std::vector<SkippedRecord> skipped;
};

namespace detail {

inline bool is_space_cp(UChar32 c) { return u_isUWhiteSpace(c) || c == 0x00A0; }

inline bool is_punct_cp(UChar32 c) {
    return u_ispunct(c) || u_charType(c) == U_MATH_SYMBOL || u_charType(c) == U_CURRENCY_SYMBOL ||
           u_charType(c) == U_MODIFIER_SYMBOL || u_charType(c) == U_OTHER_SYMBOL;
}

/// Strip leading/trailing punctuation code points of a UTF-8 token.
inline std::string strip_punct(std::string_view token) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(token.data(), static_cast<int32_t>(token.size())));
    int32_t b = 0, e = u.length();
    while (b < e) {
        UChar32 c = u.char32At(b);
        if (!is_punct_cp(c)) break;
        b += U16_LENGTH(c);
    }
    while (e > b) {
        int32_t prev = u.moveIndex32(e, -1);
        UChar32 c = u.char32At(prev);
        if (!is_punct_cp(c)) break;
        e = prev;
    }
    std::string out;
    u.tempSubStringBetween(b, e).toUTF8String(out);
    return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && s[i] == ' ') ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace detail

/// Lowercase, NFC-normalize and collapse whitespace runs to one space (with
/// leading/trailing whitespace removed). Punctuation and word forms are left
/// untouched. Idempotent.
[[nodiscard]] inline std::string preprocess(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw Error(std::string("ICU NFC unavailable: ") + u_errorName(status));

    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    u = nfc->normalize(u, status);
    u.toLower(icu::Locale::getRoot());
    u = nfc->normalize(u, status);
    if (U_FAILURE(status)) throw Error(std::string("ICU normalization failed: ") + u_errorName(status));

    icu::UnicodeString collapsed;
    bool pending_space = false;
    for (int32_t i = 0; i < u.length();) {
        UChar32 c = u.char32At(i);
        i += U16_LENGTH(c);
        if (detail::is_space_cp(c)) {
            pending_space = !collapsed.isEmpty();
            continue;
        }
        if (pending_space) collapsed.append(UChar32{' '});
        pending_space = false;
        collapsed.append(c);
    }
    std::string out;
    collapsed.toUTF8String(out);
    return out;
}

/// Splits a document into sentences (terminal . ! ? followed by whitespace or
/// end of text, unless the token is a configured abbreviation) and words
/// (whitespace split, edge punctuation stripped). Sentences without words are
/// dropped and the remaining ones renumbered from 1.
[[nodiscard]] inline SegmentedDocument segment(std::string doc_id, std::string_view text,
                                               const SegmenterConfig& cfg = {}) {
    const std::string norm = preprocess(text);
    SegmentedDocument doc;
    doc.doc_id = std::move(doc_id);

    auto is_terminal = [](char c) { return c == '.' || c == '!' || c == '?'; };
    auto ends_sentence = [&](std::string_view tok) {
        // strip closing quotes/brackets before looking for the terminal mark
        std::size_t e = tok.size();
        while (e > 0 && (tok[e - 1] == '"' || tok[e - 1] == '\'' || tok[e - 1] == ')' || tok[e - 1] == ']'))
            --e;
        if (e == 0 || !is_terminal(tok[e - 1])) return false;
        const std::string_view core = tok.substr(0, e);
        if (core.back() == '.' &&
            std::find(cfg.abbreviations.begin(), cfg.abbreviations.end(), core) != cfg.abbreviations.end())
            return false;
        return true;
    };

    auto flush = [&](std::vector<std::string_view>& toks) {
        if (toks.empty()) return;
        Sentence s;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (i) s.text.push_back(' ');
            s.text.append(toks[i]);
            std::string w = detail::strip_punct(toks[i]);
            if (!w.empty()) s.words.push_back(std::move(w));
        }
        toks.clear();
        if (s.words.empty()) return;
        s.index = doc.sentences.size() + 1;
        doc.sentences.push_back(std::move(s));
    };

    std::vector<std::string_view> current;
    for (auto tok : detail::split_ws(norm)) {
        current.push_back(tok);
        if (ends_sentence(tok)) flush(current);
    }
    flush(current);

    if (doc.sentences.empty()) throw EmptyDocumentError("document '" + doc.doc_id + "' has no words");
    return doc;
}

[[nodiscard]] inline SegmentationResult segment_corpus(const std::vector<EssayRecord>& records,
                                                       const SegmenterConfig& cfg = {}) {
    SegmentationResult out;
    for (const auto& r : records) {
        try {
            out.documents.push_back(segment(r.id, r.text, cfg));
        } catch (const EmptyDocumentError& e) {
            out.skipped.push_back({r.id, e.what()});
        }
    }
    return out;
}

[[nodiscard]] inline nlohmann::json to_json(const SegmentedDocument& d) {
    nlohmann::json sents = nlohmann::json::array();
    for (const auto& s : d.sentences) sents.push_back({{"index", s.index}, {"text", s.text}, {"words", s.words}});
    return {{"doc_id", d.doc_id}, {"sentences", std::move(sents)}};
}

[[nodiscard]] inline SegmentedDocument segmented_from_json(const nlohmann::json& j) {
    SegmentedDocument d;
    d.doc_id = j.at("doc_id").get<std::string>();
    for (const auto& s : j.at("sentences"))
        d.sentences.push_back({s.at("index").get<std::size_t>(), s.at("text").get<std::string>(),
                               s.at("words").get<std::vector<std::string>>()});
    return d;
}

/// One JSON object per line.
inline void write_segments(const std::filesystem::path& path, const std::vector<SegmentedDocument>& docs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    for (const auto& d : docs) out << to_json(d).dump() << '\n';
}

[[nodiscard]] inline std::vector<SegmentedDocument> read_segments(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::vector<SegmentedDocument> docs;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (detail::trim(line).empty()) continue;
        try {
            docs.push_back(segmented_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return docs;
}

}  // namespace hyperpersona
