#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "util.hpp"

namespace hyperpersona {

enum class Trait : int { Openness = 0, Conscientiousness, Extraversion, Agreeableness, Neuroticism };

inline constexpr std::array<Trait, 5> kAllTraits = {Trait::Openness, Trait::Conscientiousness,
                                                   Trait::Extraversion, Trait::Agreeableness,
                                                   Trait::Neuroticism};

[[nodiscard]] constexpr char trait_letter(Trait t) noexcept {
    constexpr char letters[] = {'O', 'C', 'E', 'A', 'N'};
    return letters[static_cast<int>(t)];
}

[[nodiscard]] constexpr std::string_view trait_name(Trait t) noexcept {
    constexpr std::string_view names[] = {"openness", "conscientiousness", "extraversion",
                                          "agreeableness", "neuroticism"};
    return names[static_cast<int>(t)];
}

[[nodiscard]] inline Trait parse_trait(std::string_view s) {
    std::string lower;
    for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    for (Trait t : kAllTraits) {
        if (lower.size() == 1 && lower[0] == std::tolower(trait_letter(t))) return t;
        if (lower == trait_name(t)) return t;
    }
    throw ConfigError("unknown trait '" + std::string(s) + "' (expected O|C|E|A|N)");
}

struct TraitLabels {
    bool openness = false;
    bool conscientiousness = false;
    bool extraversion = false;
    bool agreeableness = false;
    bool neuroticism = false;

    [[nodiscard]] bool get(Trait t) const noexcept {
        switch (t) {
            case Trait::Openness: return openness;
            case Trait::Conscientiousness: return conscientiousness;
            case Trait::Extraversion: return extraversion;
            case Trait::Agreeableness: return agreeableness;
            case Trait::Neuroticism: return neuroticism;
        }
        return false;
    }
    void set(Trait t, bool v) noexcept {
        switch (t) {
            case Trait::Openness: openness = v; break;
            case Trait::Conscientiousness: conscientiousness = v; break;
            case Trait::Extraversion: extraversion = v; break;
            case Trait::Agreeableness: agreeableness = v; break;
            case Trait::Neuroticism: neuroticism = v; break;
        }
    }
    friend bool operator==(const TraitLabels&, const TraitLabels&) = default;
};

struct EssayRecord {
    std::string id;
    std::string text;
    TraitLabels labels;
    friend bool operator==(const EssayRecord&, const EssayRecord&) = default;
};

/// Header names for the id/text/label columns plus the label parse table.
/// Defaults follow the common Essays CSV release.
struct ColumnMap {
    std::string id = "#AUTHID";
    std::string text = "TEXT";
    std::array<std::string, 5> labels = {"cOPN", "cCON", "cEXT", "cAGR", "cNEU"};
    std::vector<std::string> true_tokens = {"y", "1", "true"};
    std::vector<std::string> false_tokens = {"n", "0", "false"};

    [[nodiscard]] const std::string& label(Trait t) const { return labels[static_cast<int>(t)]; }

    /// Keys: "id", "text", the five trait names, "true_tokens", "false_tokens".
    /// Keys that are absent keep their default; a key set to null or "" is an
    /// explicit removal and is reported as a schema error at load time.
    static ColumnMap from_json(const nlohmann::json& j) {
        ColumnMap m;
        auto read = [&](const char* key, std::string& dst) {
            if (!j.contains(key)) return;
            dst = j.at(key).is_null() ? std::string{} : j.at(key).get<std::string>();
        };
        read("id", m.id);
        read("text", m.text);
        for (Trait t : kAllTraits) read(std::string(trait_name(t)).c_str(), m.labels[static_cast<int>(t)]);
        if (j.contains("true_tokens")) m.true_tokens = j.at("true_tokens").get<std::vector<std::string>>();
        if (j.contains("false_tokens")) m.false_tokens = j.at("false_tokens").get<std::vector<std::string>>();
        return m;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j;
        j["id"] = id;
        j["text"] = text;
        for (Trait t : kAllTraits) j[std::string(trait_name(t))] = label(t);
        j["true_tokens"] = true_tokens;
        j["false_tokens"] = false_tokens;
        return j;
    }
};

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    /// When set, each class of this trait is split separately.
    std::optional<Trait> stratify_by;
};

struct Split {
    std::vector<EssayRecord> train;
    std::vector<EssayRecord> test;
};

struct TraitCount {
    std::size_t count_true = 0;
    std::size_t count_false = 0;
};

using LabelDistribution = std::array<TraitCount, 5>;

namespace csv {

/// RFC 4180 reader: quoted fields, doubled quotes, embedded separators and
/// line breaks, CRLF or LF record terminators.
[[nodiscard]] inline std::vector<std::vector<std::string>> parse(std::string_view data) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t i = 0;
    if (data.substr(0, 3) == "\xEF\xBB\xBF") i = 3;

    auto end_field = [&] {
        row.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
        row.clear();
    };

    for (; i < data.size(); ++i) {
        const char c = data[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < data.size() && data[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field_started && field.empty()) {
                    in_quotes = true;
                    field_started = true;
                } else {
                    field.push_back(c);
                }
                break;
            case ',': end_field(); break;
            case '\r':
                if (i + 1 < data.size() && data[i + 1] == '\n') ++i;
                end_row();
                break;
            case '\n': end_row(); break;
            default:
                field.push_back(c);
                field_started = true;
        }
    }
    if (in_quotes) throw FormatError("csv: unterminated quoted field");
    if (!field.empty() || !row.empty() || field_started) end_row();
    return rows;
}

[[nodiscard]] inline std::string quote(std::string_view s) {
    const bool needs = s.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace csv

namespace detail {

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n\f\v");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n\f\v");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

[[nodiscard]] inline std::vector<EssayRecord> parse_corpus(std::string_view data, const ColumnMap& map) {
    const auto rows = csv::parse(data);
    if (rows.empty()) throw EmptyCorpusError("corpus file is empty");
    const auto& header = rows.front();

    auto column = [&](const std::string& name, std::string_view role) -> std::size_t {
        if (name.empty()) throw SchemaError("column map has no '" + std::string(role) + "' column");
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw SchemaError("missing column '" + name + "' (" + std::string(role) + ")");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t id_col = column(map.id, "id");
    const std::size_t text_col = column(map.text, "text");
    std::array<std::size_t, 5> label_cols{};
    for (Trait t : kAllTraits) label_cols[static_cast<int>(t)] = column(map.label(t), trait_name(t));

    std::vector<std::string> trues, falses;
    for (const auto& s : map.true_tokens) trues.push_back(detail::ascii_lower(s));
    for (const auto& s : map.false_tokens) falses.push_back(detail::ascii_lower(s));

    std::vector<EssayRecord> records;
    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        auto cell = [&](std::size_t c) -> const std::string& {
            if (c >= row.size())
                throw RowError(r, "expected " + std::to_string(header.size()) + " cells, found " +
                                      std::to_string(row.size()));
            return row[c];
        };
        EssayRecord rec;
        rec.id = cell(id_col);
        rec.text = cell(text_col);
        if (detail::trim(rec.text).empty()) throw RowError(r, "empty text");
        if (!seen.insert(rec.id).second) throw RowError(r, "duplicate id '" + rec.id + "'");
        for (Trait t : kAllTraits) {
            const auto v = detail::ascii_lower(detail::trim(cell(label_cols[static_cast<int>(t)])));
            if (std::find(trues.begin(), trues.end(), v) != trues.end()) rec.labels.set(t, true);
            else if (std::find(falses.begin(), falses.end(), v) != falses.end()) rec.labels.set(t, false);
            else
                throw RowError(r, "unparseable label '" + v + "' in column '" + map.label(t) + "'");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

/// Reads a UTF-8 CSV corpus with a header row.
[[nodiscard]] inline std::vector<EssayRecord> load_corpus(const std::filesystem::path& path,
                                                          const ColumnMap& map = {}) {
    return parse_corpus(detail::read_file(path), map);
}

inline void write_corpus(const std::filesystem::path& path, const std::vector<EssayRecord>& records,
                         const ColumnMap& map = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << csv::quote(map.id) << ',' << csv::quote(map.text);
    for (Trait t : kAllTraits) out << ',' << csv::quote(map.label(t));
    out << "\r\n";
    for (const auto& r : records) {
        out << csv::quote(r.id) << ',' << csv::quote(r.text);
        for (Trait t : kAllTraits) out << ',' << (r.labels.get(t) ? 'y' : 'n');
        out << "\r\n";
    }
}

/// Uniform random split (optionally stratified). Both sides keep the input
/// order of their members.
[[nodiscard]] inline Split split_train_test(const std::vector<EssayRecord>& records, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ConfigError("train_fraction must lie in (0,1)");
    if (records.empty()) throw ConfigError("cannot split an empty corpus");

    RngStream rng(spec.seed);
    std::vector<char> in_train(records.size(), 0);
    auto pick = [&](std::vector<std::size_t> idx) {
        const auto k = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(idx.size())));
        shuffle_in_place(idx, rng);
        for (std::size_t i = 0; i < k && i < idx.size(); ++i) in_train[idx[i]] = 1;
    };
    if (spec.stratify_by) {
        std::vector<std::size_t> pos, neg;
        for (std::size_t i = 0; i < records.size(); ++i)
            (records[i].labels.get(*spec.stratify_by) ? pos : neg).push_back(i);
        pick(std::move(pos));
        pick(std::move(neg));
    } else {
        std::vector<std::size_t> all(records.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        pick(std::move(all));
    }

    Split out;
    for (std::size_t i = 0; i < records.size(); ++i) (in_train[i] ? out.train : out.test).push_back(records[i]);
    if (out.train.empty() || out.test.empty())
        throw ConfigError("split leaves one side empty (n=" + std::to_string(records.size()) +
                          ", train_fraction=" + std::to_string(spec.train_fraction) + ")");
    return out;
}

[[nodiscard]] inline LabelDistribution label_distribution(const std::vector<EssayRecord>& records) {
    LabelDistribution d{};
    for (const auto& r : records)
        for (Trait t : kAllTraits) {
            auto& c = d[static_cast<int>(t)];
            (r.labels.get(t) ? c.count_true : c.count_false) += 1;
        }
    return d;
}

[[nodiscard]] inline nlohmann::json to_json(const LabelDistribution& d) {
    nlohmann::json j = nlohmann::json::object();
    for (Trait t : kAllTraits) {
        const auto& c = d[static_cast<int>(t)];
        j[std::string(trait_name(t))] = {{"true", c.count_true}, {"false", c.count_false}};
    }
    return j;
}

}  // namespace hyperpersona
