#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "util.hpp"

namespace hyperpersona {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    [[nodiscard]] std::size_t total() const noexcept { return tp + fp + fn + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct Scores {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Positive = trait present. Accepts any pair of indexable boolean ranges.
template <class Preds, class Labels>
[[nodiscard]] ConfusionCounts confusion(const Preds& preds, const Labels& labels) {
    if (preds.size() != labels.size())
        throw DimensionError("confusion: " + std::to_string(preds.size()) + " predictions, " + std::to_string(labels.size()) + " labels");
    if (preds.empty()) throw ContractError("confusion: no samples");
    ConfusionCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const bool p = static_cast<bool>(preds[i]), l = static_cast<bool>(labels[i]);
        if (p) (l ? c.tp : c.fp) += 1;
        else (l ? c.fn : c.tn) += 1;
    }
    return c;
}

/// Zero denominators give 0 precision/recall, and f1 = 0 when p + r = 0.
[[nodiscard]] inline Scores score(const ConfusionCounts& c) {
    if (c.total() == 0) throw ContractError("score: no samples");
    const auto ratio = [](std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); };
    Scores s;
    s.accuracy = ratio(c.tp + c.tn, c.total());
    s.precision = ratio(c.tp, c.tp + c.fp);
    s.recall = ratio(c.tp, c.tp + c.fn);
    s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

[[nodiscard]] inline std::string percent(double fraction_or_percent, bool is_percent = false) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", is_percent ? fraction_or_percent : 100.0 * fraction_or_percent);
    return buf;
}

/// Per-trait percentages plus their unrounded mean.
struct TraitReport {
    struct Row {
        Trait trait;
        double accuracy, f1, precision, recall;  // percent, unrounded
    };
    std::vector<Row> rows;
    Row average{Trait::Openness, 0, 0, 0, 0};

    /// Rows in percent (e.g. taken from a published table).
    static TraitReport from_percentages(std::vector<Row> rows) {
        TraitReport r;
        r.rows = std::move(rows);
        r.compute_average();
        return r;
    }

    void compute_average() {
        average = {Trait::Openness, 0, 0, 0, 0};
        if (rows.empty()) return;
        for (const auto& row : rows) {
            average.accuracy += row.accuracy;
            average.f1 += row.f1;
            average.precision += row.precision;
            average.recall += row.recall;
        }
        const double n = static_cast<double>(rows.size());
        average.accuracy /= n;
        average.f1 /= n;
        average.precision /= n;
        average.recall /= n;
    }

    /// Same column order as the published results table.
    [[nodiscard]] std::string to_markdown() const {
        std::string out = "| Personality Trait | Accuracy(%) | F1(%) | Precision(%) | Recall(%) |\n";
        out += "|---|---|---|---|---|\n";
        auto line = [&](const std::string& name, const Row& r) {
            out += "| " + name + " | " + percent(r.accuracy, true) + " | " + percent(r.f1, true) + " | " +
                   percent(r.precision, true) + " | " + percent(r.recall, true) + " |\n";
        };
        for (const auto& r : rows) line(std::string(1, trait_letter(r.trait)), r);
        line("Average", average);
        return out;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        auto row = [](const Row& r) {
            auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
            return nlohmann::json{{"accuracy", round2(r.accuracy)}, {"f1", round2(r.f1)}, {"precision", round2(r.precision)},
                                  {"recall", round2(r.recall)}};
        };
        nlohmann::json j = nlohmann::json::object();
        for (const auto& r : rows) j[std::string(1, trait_letter(r.trait))] = row(r);
        j["average"] = row(average);
        return j;
    }
};

struct TraitOutcome {
    std::vector<bool> predictions;
    std::vector<bool> labels;
};

/// Requires all five traits.
[[nodiscard]] inline TraitReport evaluate_traits(const std::map<Trait, TraitOutcome>& outcomes) {
    TraitReport report;
    for (Trait t : kAllTraits) {
        auto it = outcomes.find(t);
        if (it == outcomes.end()) throw ContractError(std::string("evaluate_traits: missing trait ") + std::string(trait_name(t)));
        const auto s = score(confusion(it->second.predictions, it->second.labels));
        report.rows.push_back({t, 100.0 * s.accuracy, 100.0 * s.f1, 100.0 * s.precision, 100.0 * s.recall});
    }
    report.compute_average();
    return report;
}

}  // namespace hyperpersona
