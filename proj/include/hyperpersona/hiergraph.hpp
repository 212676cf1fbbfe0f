#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hypergraph.hpp"
#include "util.hpp"

namespace hyperpersona {

enum class NodeKind : std::uint8_t { Document = 0, Sentence = 1, Word = 2 };

[[nodiscard]] constexpr std::string_view kind_name(NodeKind k) noexcept {
    switch (k) {
        case NodeKind::Document: return "document";
        case NodeKind::Sentence: return "sentence";
        case NodeKind::Word: return "word";
    }
    return "?";
}

/// Which node kinds survive into the graph.
enum class LevelConfig : std::uint8_t { Full = 0, DocSent, DocWord, SentOnly, WordOnly };

inline constexpr std::array<LevelConfig, 5> kAllLevels = {LevelConfig::Full, LevelConfig::DocSent, LevelConfig::DocWord,
                                                         LevelConfig::SentOnly, LevelConfig::WordOnly};

[[nodiscard]] constexpr std::string_view level_flag(LevelConfig l) noexcept {
    switch (l) {
        case LevelConfig::Full: return "full";
        case LevelConfig::DocSent: return "doc-sent";
        case LevelConfig::DocWord: return "doc-word";
        case LevelConfig::SentOnly: return "sent";
        case LevelConfig::WordOnly: return "word";
    }
    return "?";
}

[[nodiscard]] constexpr std::string_view level_title(LevelConfig l) noexcept {
    switch (l) {
        case LevelConfig::Full: return "Multi-level (Document + Sentence + Word-level)";
        case LevelConfig::DocSent: return "Document + Sentence-level";
        case LevelConfig::DocWord: return "Document + Word-level";
        case LevelConfig::SentOnly: return "Sentence-level";
        case LevelConfig::WordOnly: return "Word-level";
    }
    return "?";
}

[[nodiscard]] inline LevelConfig parse_level(std::string_view s) {
    for (auto l : kAllLevels)
        if (s == level_flag(l)) return l;
    throw ConfigError("unknown level config '" + std::string(s) + "' (expected full|doc-sent|doc-word|sent|word)");
}

struct GraphNode {
    NodeKind kind;
    std::size_t sentence = 0;  // 1-based, 0 for the document node
    std::size_t word = 0;      // 1-based, 0 unless a word node
    std::vector<double> feature;
};

/// Undirected, stored once.
struct GraphEdge {
    std::size_t u = 0;
    std::size_t v = 0;
    double weight = 0.0;
};

struct HierGraph {
    std::string doc_id;
    LevelConfig level = LevelConfig::Full;
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;

    [[nodiscard]] std::size_t dim() const noexcept { return nodes.empty() ? 0 : nodes.front().feature.size(); }
};

/// max(0, cos(u, v)), 0 when either vector has zero norm, clamped into [0, 1].
/// Sums run in index order.
[[nodiscard]] inline double edge_weight(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw DimensionError("edge_weight: lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    const double c = dot / (std::sqrt(nu) * std::sqrt(nv));
    return std::clamp(c, 0.0, 1.0);
}

namespace detail {

inline std::vector<double> widen(const std::vector<float>& f) { return {f.begin(), f.end()}; }

}  // namespace detail

/// Node order: document, sentences by j, words by (j, k). Edge order follows
/// the same walk.
[[nodiscard]] inline HierGraph to_hiergraph(const TextHypergraph& hg, LevelConfig level) {
    const bool want_doc = level == LevelConfig::Full || level == LevelConfig::DocSent || level == LevelConfig::DocWord;
    const bool want_sent = level == LevelConfig::Full || level == LevelConfig::DocSent || level == LevelConfig::SentOnly;
    const bool want_word = level == LevelConfig::Full || level == LevelConfig::DocWord || level == LevelConfig::WordOnly;

    HierGraph g;
    g.doc_id = hg.doc_id;
    g.level = level;
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::size_t doc_id = none;
    std::vector<std::size_t> sent_ids(hg.sentence_hyperedges.size(), none);
    std::vector<std::size_t> word_ids(hg.nodes.size(), none);

    if (want_doc) {
        doc_id = g.nodes.size();
        g.nodes.push_back({NodeKind::Document, 0, 0, detail::widen(hg.document_hyperedge.feature)});
    }
    if (want_sent)
        for (std::size_t j = 0; j < hg.sentence_hyperedges.size(); ++j) {
            sent_ids[j] = g.nodes.size();
            g.nodes.push_back({NodeKind::Sentence, j + 1, 0, detail::widen(hg.sentence_hyperedges[j].feature)});
        }
    if (want_word)
        for (std::size_t i = 0; i < hg.nodes.size(); ++i) {
            word_ids[i] = g.nodes.size();
            g.nodes.push_back({NodeKind::Word, hg.nodes[i].sentence, hg.nodes[i].word, detail::widen(hg.nodes[i].feature)});
        }
    if (g.nodes.empty()) throw DegenerateGraphError("graph for '" + hg.doc_id + "' has no nodes at this level");

    auto connect = [&](std::size_t a, std::size_t b) {
        g.edges.push_back({a, b, edge_weight(g.nodes[a].feature, g.nodes[b].feature)});
    };
    switch (level) {
        case LevelConfig::Full:
            for (auto s : sent_ids) connect(doc_id, s);
            for (std::size_t j = 0; j < hg.sentence_hyperedges.size(); ++j)
                for (auto w : hg.sentence_hyperedges[j].nodes) connect(sent_ids[j], word_ids[w]);
            break;
        case LevelConfig::DocSent:
            for (auto s : sent_ids) connect(doc_id, s);
            break;
        case LevelConfig::DocWord:
            for (auto w : word_ids) connect(doc_id, w);
            break;
        case LevelConfig::SentOnly:
            for (std::size_t j = 1; j < sent_ids.size(); ++j) connect(sent_ids[j - 1], sent_ids[j]);
            break;
        case LevelConfig::WordOnly:
            for (std::size_t i = 1; i < word_ids.size(); ++i) connect(word_ids[i - 1], word_ids[i]);
            break;
    }
    return g;
}

[[nodiscard]] inline nlohmann::json to_json(const HierGraph& g, bool with_features = false) {
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        nlohmann::json jn = {{"id", i}, {"kind", kind_name(n.kind)}};
        if (n.sentence) jn["sentence"] = n.sentence;
        if (n.word) jn["word"] = n.word;
        if (with_features) jn["feature"] = n.feature;
        nodes.push_back(std::move(jn));
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges) edges.push_back({{"u", e.u}, {"v", e.v}, {"weight", e.weight}});
    return {{"doc_id", g.doc_id}, {"levels", level_flag(g.level)}, {"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

// Binary graph cache: "HPHG", u32 version, u32 graph count, then per graph the
// doc id, level, node kinds/positions/features (f64) and edges. Little-endian.
namespace graph_format {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    put_u64(out, bits);
}

struct Reader {
    const std::string& in;
    std::size_t off = 0;
    std::uint64_t u64() {
        if (off + 8 > in.size()) throw CorruptionError("graph file truncated");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)])) << (8 * i);
        off += 8;
        return v;
    }
    double f64() {
        const auto bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof d);
        return d;
    }
};

}  // namespace graph_format

[[nodiscard]] inline std::string encode_graphs(const std::vector<HierGraph>& graphs) {
    using namespace graph_format;
    std::string out = "HPHG";
    put_u64(out, 1);
    put_u64(out, graphs.size());
    for (const auto& g : graphs) {
        put_u64(out, g.doc_id.size());
        out += g.doc_id;
        put_u64(out, static_cast<std::uint64_t>(g.level));
        put_u64(out, g.nodes.size());
        put_u64(out, g.dim());
        for (const auto& n : g.nodes) {
            put_u64(out, static_cast<std::uint64_t>(n.kind));
            put_u64(out, n.sentence);
            put_u64(out, n.word);
            for (double d : n.feature) put_f64(out, d);
        }
        put_u64(out, g.edges.size());
        for (const auto& e : g.edges) {
            put_u64(out, e.u);
            put_u64(out, e.v);
            put_f64(out, e.weight);
        }
    }
    return out;
}

[[nodiscard]] inline std::vector<HierGraph> decode_graphs(const std::string& in) {
    if (in.substr(0, 4) != "HPHG") throw FormatError("graph file: bad magic");
    graph_format::Reader r{in, 4};
    if (r.u64() != 1) throw FormatError("graph file: unsupported version");
    std::vector<HierGraph> graphs(r.u64());
    for (auto& g : graphs) {
        const auto len = r.u64();
        if (r.off + len > in.size()) throw CorruptionError("graph file truncated");
        g.doc_id = in.substr(r.off, len);
        r.off += len;
        g.level = static_cast<LevelConfig>(r.u64());
        g.nodes.resize(r.u64());
        const auto dim = r.u64();
        for (auto& n : g.nodes) {
            n.kind = static_cast<NodeKind>(r.u64());
            n.sentence = r.u64();
            n.word = r.u64();
            n.feature.resize(dim);
            for (auto& d : n.feature) d = r.f64();
        }
        g.edges.resize(r.u64());
        for (auto& e : g.edges) {
            e.u = r.u64();
            e.v = r.u64();
            e.weight = r.f64();
        }
    }
    if (r.off != in.size()) throw CorruptionError("graph file: trailing bytes");
    return graphs;
}

inline void write_graphs(const std::filesystem::path& path, const std::vector<HierGraph>& graphs) {
    const std::string out = encode_graphs(graphs);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

[[nodiscard]] inline std::vector<HierGraph> read_graphs(const std::filesystem::path& path) {
    return decode_graphs(detail::read_file(path));
}

}  // namespace hyperpersona
