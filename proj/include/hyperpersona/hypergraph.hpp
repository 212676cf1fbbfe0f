#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embedding.hpp"
#include "segmenter.hpp"
#include "util.hpp"

namespace hyperpersona {

/// Word occurrence node. Repeated tokens give distinct nodes.
struct WordNode {
    std::size_t sentence = 0;  // 1-based j
    std::size_t word = 0;      // 1-based k
    std::string token;
    std::vector<float> feature;
};

struct Hyperedge {
    std::vector<std::size_t> nodes;  // indices into TextHypergraph::nodes
    std::vector<float> feature;
};

/// H = (V, E): word nodes, one hyperedge per sentence, one for the document.
struct TextHypergraph {
    std::string doc_id;
    std::vector<WordNode> nodes;
    std::vector<Hyperedge> sentence_hyperedges;
    Hyperedge document_hyperedge;

    [[nodiscard]] std::size_t hyperedge_count() const noexcept { return sentence_hyperedges.size() + 1; }
};

[[nodiscard]] inline TextHypergraph build_hypergraph(const SegmentedDocument& doc, const EmbeddingBundle& bundle) {
    if (auto report = validate_bundle(bundle, doc); !report.empty()) {
        std::string msg = "bundle does not pair with document '" + doc.doc_id + "':";
        for (const auto& v : report) msg += "\n  " + v.message;
        throw ValidationError(msg);
    }
    TextHypergraph hg;
    hg.doc_id = doc.doc_id;
    hg.document_hyperedge.feature = bundle.doc_vec;
    for (std::size_t j = 0; j < doc.sentences.size(); ++j) {
        Hyperedge e;
        e.feature = bundle.sent_vecs[j];
        for (std::size_t k = 0; k < doc.sentences[j].words.size(); ++k) {
            e.nodes.push_back(hg.nodes.size());
            hg.document_hyperedge.nodes.push_back(hg.nodes.size());
            hg.nodes.push_back({j + 1, k + 1, doc.sentences[j].words[k], bundle.word_vecs[j][k]});
        }
        hg.sentence_hyperedges.push_back(std::move(e));
    }
    return hg;
}

/// |V| x |E| membership matrix, row-major; sentence columns first, the
/// document column last.
struct IncidenceMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> data;

    [[nodiscard]] std::uint8_t operator()(std::size_t v, std::size_t e) const { return data[v * cols + e]; }
};

[[nodiscard]] inline IncidenceMatrix incidence_matrix(const TextHypergraph& hg) {
    IncidenceMatrix m{hg.nodes.size(), hg.hyperedge_count(), {}};
    m.data.assign(m.rows * m.cols, 0);
    for (std::size_t e = 0; e < hg.sentence_hyperedges.size(); ++e)
        for (auto v : hg.sentence_hyperedges[e].nodes) m.data[v * m.cols + e] = 1;
    for (auto v : hg.document_hyperedge.nodes) m.data[v * m.cols + m.cols - 1] = 1;
    return m;
}

[[nodiscard]] inline nlohmann::json to_json(const TextHypergraph& hg, bool with_features = false) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < hg.nodes.size(); ++i) {
        const auto& n = hg.nodes[i];
        nlohmann::json jn = {{"id", i}, {"sentence", n.sentence}, {"word", n.word}, {"token", n.token}};
        if (with_features) jn["feature"] = n.feature;
        nodes.push_back(std::move(jn));
    }
    nlohmann::json edges = nlohmann::json::array();
    for (std::size_t j = 0; j < hg.sentence_hyperedges.size(); ++j) {
        nlohmann::json je = {{"kind", "sentence"}, {"index", j + 1}, {"nodes", hg.sentence_hyperedges[j].nodes}};
        if (with_features) je["feature"] = hg.sentence_hyperedges[j].feature;
        edges.push_back(std::move(je));
    }
    nlohmann::json jd = {{"kind", "document"}, {"nodes", hg.document_hyperedge.nodes}};
    if (with_features) jd["feature"] = hg.document_hyperedge.feature;
    edges.push_back(std::move(jd));
    return {{"doc_id", hg.doc_id}, {"nodes", std::move(nodes)}, {"hyperedges", std::move(edges)}};
}

}  // namespace hyperpersona
