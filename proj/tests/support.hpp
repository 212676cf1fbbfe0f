#pragma once

#include <numeric>
#include <string>
#include <vector>

#include <hyperpersona/hyperpersona.hpp>

namespace hp_test {

using namespace hyperpersona;

inline HierGraph toy_graph(const std::string& text, std::uint32_t dim, std::uint64_t seed,
                           LevelConfig level = LevelConfig::Full, const std::string& id = "toy") {
    const auto doc = segment(id, text);
    return to_hiergraph(build_hypergraph(doc, hash_embed(doc, dim, seed)), level);
}

inline const std::string kToyText = "The cat sat down. It was very happy today. Then rain came.";

/// Node i of `g` becomes node perm[i]; edges are rewritten to match and
/// listed in reverse.
inline HierGraph relabel(const HierGraph& g, const std::vector<std::size_t>& perm) {
    HierGraph out = g;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) out.nodes[perm[i]] = g.nodes[i];
    out.edges.clear();
    for (auto it = g.edges.rbegin(); it != g.edges.rend(); ++it) out.edges.push_back({perm[it->v], perm[it->u], it->weight});
    return out;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, RngStream& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle_in_place(p, rng);
    return p;
}

template <class T>
ModelParams<T> small_model(std::size_t dim, std::uint64_t seed, double dropout = 0.2) {
    ModelShape shape{dim, {6, 5}, 4};
    return init_params<T>(shape, seed, 1.0, dropout);
}

/// Deterministic pseudo-random values in [lo, hi).
inline void randomize(ModelParams<double>& p, std::uint64_t seed, double lo = -0.8, double hi = 0.8) {
    RngStream rng(seed);
    for (auto& t : p.parameters())
        for (auto& v : t.value_mut()) v = lo + (hi - lo) * rng.uniform();
}

}  // namespace hp_test
