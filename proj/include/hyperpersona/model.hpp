#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hiergraph.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace hyperpersona {

using ad::Mode;
using ad::Tensor;

/// How cosine edge weights enter message passing: ScaleMessage multiplies each
/// neighbour message by its weight, StructuralOnly ignores the weights.
enum class EdgeWeightMode : std::uint8_t { ScaleMessage = 0, StructuralOnly = 1 };

[[nodiscard]] constexpr std::string_view edge_mode_flag(EdgeWeightMode m) noexcept {
    return m == EdgeWeightMode::ScaleMessage ? "scale-message" : "structural-only";
}

[[nodiscard]] inline EdgeWeightMode parse_edge_mode(std::string_view s) {
    if (s == "scale-message") return EdgeWeightMode::ScaleMessage;
    if (s == "structural-only") return EdgeWeightMode::StructuralOnly;
    throw ConfigError("unknown edge weight mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Batched graph input
// ---------------------------------------------------------------------------

/// Disjoint union of one or more graphs. Edges are directed (message from
/// src to dst); every undirected graph edge appears in both directions.
template <class T>
struct GraphBatch {
    std::size_t num_nodes = 0;
    std::size_t dim = 0;
    std::vector<T> features;  // num_nodes x dim
    std::vector<std::size_t> src;
    std::vector<std::size_t> dst;
    std::vector<T> weight;
    std::vector<std::size_t> graph_ids;  // per node
    std::size_t num_graphs = 0;

    void append(const HierGraph& g) {
        if (g.nodes.empty()) throw DegenerateGraphError("cannot batch an empty graph");
        if (num_graphs == 0) dim = g.dim();
        if (g.dim() != dim) throw DimensionError("batched graphs differ in feature dimension");
        const std::size_t offset = num_nodes;
        for (const auto& n : g.nodes) {
            if (n.feature.size() != dim) throw DimensionError("graph '" + g.doc_id + "' has ragged features");
            for (double f : n.feature) features.push_back(static_cast<T>(f));
            graph_ids.push_back(num_graphs);
        }
        for (const auto& e : g.edges) {
            if (e.u >= g.nodes.size() || e.v >= g.nodes.size()) throw IndexError("edge endpoint out of range in '" + g.doc_id + "'");
            src.push_back(offset + e.u);
            dst.push_back(offset + e.v);
            weight.push_back(static_cast<T>(e.weight));
            src.push_back(offset + e.v);
            dst.push_back(offset + e.u);
            weight.push_back(static_cast<T>(e.weight));
        }
        num_nodes += g.nodes.size();
        ++num_graphs;
    }

    static GraphBatch of(const HierGraph& g) {
        GraphBatch b;
        b.append(g);
        return b;
    }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class T>
struct FeatureMaskParams {
    Tensor<T> s;  // {d}
    double tau = 1.0;
};

/// Matrices are in_dim x out_dim and applied as H . W.
template <class T>
struct EncoderLayerParams {
    Tensor<T> w_self, w_value, w_query, w_key, w_res;
    Tensor<T> gamma, beta;

    [[nodiscard]] std::size_t in_dim() const { return w_self.rows(); }
    [[nodiscard]] std::size_t out_dim() const { return w_self.cols(); }
};

template <class T>
struct HeadParams {
    Tensor<T> w1, b1, gamma, beta, w2, b2;
    double dropout = 0.2;
};

struct ModelShape {
    std::size_t input_dim = 0;
    std::array<std::size_t, 2> hidden = {128, 64};
    std::size_t latent = 16;
};

template <class T>
struct ModelParams {
    FeatureMaskParams<T> mask;
    std::array<EncoderLayerParams<T>, 2> layers;
    HeadParams<T> head;
    EdgeWeightMode edge_mode = EdgeWeightMode::ScaleMessage;

    [[nodiscard]] std::size_t input_dim() const { return mask.s.size(); }

    /// Canonical (name, tensor) order used by the optimizer and checkpoints.
    [[nodiscard]] std::vector<std::pair<std::string, Tensor<T>>> named() const {
        std::vector<std::pair<std::string, Tensor<T>>> out{{"mask.s", mask.s}};
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto p = "layer" + std::to_string(l) + ".";
            const auto& L = layers[l];
            out.insert(out.end(), {{p + "w_self", L.w_self}, {p + "w_value", L.w_value}, {p + "w_query", L.w_query},
                                   {p + "w_key", L.w_key}, {p + "w_res", L.w_res}, {p + "gamma", L.gamma}, {p + "beta", L.beta}});
        }
        out.insert(out.end(), {{"head.w1", head.w1}, {"head.b1", head.b1}, {"head.gamma", head.gamma},
                               {"head.beta", head.beta}, {"head.w2", head.w2}, {"head.b2", head.b2}});
        return out;
    }

    [[nodiscard]] std::vector<Tensor<T>> parameters() const {
        std::vector<Tensor<T>> out;
        for (auto& [name, t] : named()) out.push_back(t);
        return out;
    }

    /// Deep copy (fresh nodes, same values).
    [[nodiscard]] ModelParams clone() const {
        ModelParams c = *this;
        auto cp = [](Tensor<T>& t) { t = Tensor<T>::parameter(t.shape(), {t.value().begin(), t.value().end()}); };
        cp(c.mask.s);
        for (auto& L : c.layers)
            for (auto* t : {&L.w_self, &L.w_value, &L.w_query, &L.w_key, &L.w_res, &L.gamma, &L.beta}) cp(*t);
        for (auto* t : {&c.head.w1, &c.head.b1, &c.head.gamma, &c.head.beta, &c.head.w2, &c.head.b2}) cp(*t);
        return c;
    }
};

namespace detail {

template <class T>
Tensor<T> glorot(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> v(fan_in * fan_out);
    for (auto& x : v) x = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
    return Tensor<T>::parameter({fan_in, fan_out}, std::move(v));
}

template <class T>
Tensor<T> filled(std::size_t n, T value) {
    return Tensor<T>::parameter({n}, std::vector<T>(n, value));
}

}  // namespace detail

/// Glorot-uniform matrices, zero biases/betas, unit gammas, mask logits 0.5.
template <class T>
ModelParams<T> init_params(const ModelShape& shape, std::uint64_t seed, double tau = 1.0, double dropout = 0.2,
                           EdgeWeightMode edge_mode = EdgeWeightMode::ScaleMessage) {
    if (shape.input_dim == 0) throw ConfigError("model input dimension must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    RngStream rng(seed);
    ModelParams<T> p;
    p.edge_mode = edge_mode;
    p.mask.s = detail::filled<T>(shape.input_dim, T(0.5));
    p.mask.tau = tau;
    std::size_t in = shape.input_dim;
    for (std::size_t l = 0; l < 2; ++l) {
        const std::size_t out = shape.hidden[l];
        auto& L = p.layers[l];
        L.w_self = detail::glorot<T>(in, out, rng);
        L.w_value = detail::glorot<T>(in, out, rng);
        L.w_query = detail::glorot<T>(in, out, rng);
        L.w_key = detail::glorot<T>(in, out, rng);
        L.w_res = detail::glorot<T>(in, out, rng);
        L.gamma = detail::filled<T>(out, T(1));
        L.beta = detail::filled<T>(out, T(0));
        in = out;
    }
    p.head.w1 = detail::glorot<T>(in, shape.latent, rng);
    p.head.b1 = detail::filled<T>(shape.latent, T(0));
    p.head.gamma = detail::filled<T>(shape.latent, T(1));
    p.head.beta = detail::filled<T>(shape.latent, T(0));
    p.head.w2 = detail::glorot<T>(shape.latent, 1, rng);
    p.head.b2 = detail::filled<T>(1, T(0));
    p.head.dropout = dropout;
    return p;
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

/// Train: m_j = sigmoid((s_j + g_j) / tau) with g_j ~ Gumbel(0,1).
/// Eval: m_j = sigmoid(s_j / tau), no noise.
/// The noise is a constant of the forward pass; gradients reach s through the
/// sigmoid only.
template <class T>
Tensor<T> gumbel_sigmoid_mask(const FeatureMaskParams<T>& mask, RngStream& rng, Mode mode) {
    if (!(mask.tau > 0.0)) throw ConfigError("gumbel_sigmoid_mask: tau must be positive");
    Tensor<T> logits = mask.s;
    if (mode == Mode::Train) {
        std::vector<T> g(mask.s.size());
        for (auto& x : g) x = static_cast<T>(-std::log(-std::log(rng.uniform_open())));
        logits = ad::add(logits, Tensor<T>::constant(mask.s.shape(), std::move(g)));
    }
    return ad::sigmoid(ad::scale(logits, static_cast<T>(1.0 / mask.tau)));
}

/// x~_i = x_i (.) m for every row.
template <class T>
Tensor<T> apply_mask(const Tensor<T>& x, const Tensor<T>& m) {
    if (x.cols() != m.size())
        throw DimensionError("apply_mask: features have " + std::to_string(x.cols()) + " columns, mask has " + std::to_string(m.size()));
    return ad::mul_rowvec(x, m);
}

/// Edge list view consumed by transformer_conv.
template <class T>
struct EdgeList {
    std::span<const std::size_t> src;
    std::span<const std::size_t> dst;
    std::span<const T> weight;
};

/// Attention coefficients per directed edge: softmax over the in-edges of each
/// destination of <H_dst W_query, H_src W_key> / sqrt(out_dim).
template <class T>
Tensor<T> attention_coefficients(const EncoderLayerParams<T>& layer, const Tensor<T>& h, const EdgeList<T>& edges) {
    const std::size_t n = h.rows();
    for (std::size_t e = 0; e < edges.src.size(); ++e)
        if (edges.src[e] >= n || edges.dst[e] >= n) throw IndexError("transformer_conv: edge endpoint out of range");
    std::vector<std::size_t> src(edges.src.begin(), edges.src.end());
    std::vector<std::size_t> dst(edges.dst.begin(), edges.dst.end());
    const auto q = ad::gather_rows(ad::matmul(h, layer.w_query), dst);
    const auto k = ad::gather_rows(ad::matmul(h, layer.w_key), src);
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(layer.out_dim())));
    return ad::segment_softmax(ad::scale(ad::row_dot(q, k), inv_sqrt), std::move(dst), n);
}

namespace detail {

template <class T>
Tensor<T> conv_with_self(const EncoderLayerParams<T>& layer, const Tensor<T>& h, const EdgeList<T>& edges, EdgeWeightMode mode,
                         const Tensor<T>& w_self) {
    if (h.cols() != layer.in_dim())
        throw DimensionError("transformer_conv: input has " + std::to_string(h.cols()) + " features, layer expects " +
                             std::to_string(layer.in_dim()));
    const std::size_t n = h.rows();
    auto self_term = ad::matmul(h, w_self);
    if (edges.src.empty()) return self_term;

    auto alpha = attention_coefficients(layer, h, edges);
    if (mode == EdgeWeightMode::ScaleMessage)
        alpha = ad::mul(alpha, Tensor<T>::constant(alpha.shape(), {edges.weight.begin(), edges.weight.end()}));
    std::vector<std::size_t> src(edges.src.begin(), edges.src.end());
    std::vector<std::size_t> dst(edges.dst.begin(), edges.dst.end());
    auto messages = ad::mul_rows(ad::gather_rows(ad::matmul(h, layer.w_value), std::move(src)), alpha);
    return ad::add(self_term, ad::segment_sum(messages, std::move(dst), n));
}

}  // namespace detail

/// x'_i = x_i W_self + sum_{j in N(i)} alpha_ij w_ij^gamma x_j W_value, with
/// gamma = 1 in ScaleMessage mode and 0 in StructuralOnly mode. Nodes without
/// in-edges get only the self term.
template <class T>
Tensor<T> transformer_conv(const EncoderLayerParams<T>& layer, const Tensor<T>& h, const EdgeList<T>& edges,
                           EdgeWeightMode mode = EdgeWeightMode::ScaleMessage) {
    return detail::conv_with_self(layer, h, edges, mode, layer.w_self);
}

/// H_next = sigmoid(layer_norm(H W_res + transformer_conv(H))). Both linear
/// terms read the same H, so they share one product H (W_res + W_self).
template <class T>
Tensor<T> encode_layer(const EncoderLayerParams<T>& layer, const Tensor<T>& h, const EdgeList<T>& edges,
                       EdgeWeightMode mode = EdgeWeightMode::ScaleMessage) {
    const auto pre = detail::conv_with_self(layer, h, edges, mode, ad::add(layer.w_res, layer.w_self));
    return ad::sigmoid(ad::layer_norm(pre, layer.gamma, layer.beta));
}

/// z_G = sum of node rows per graph.
template <class T>
Tensor<T> pool_graph(const Tensor<T>& h, std::vector<std::size_t> graph_ids, std::size_t num_graphs) {
    return ad::segment_sum(h, std::move(graph_ids), num_graphs);
}

/// z1 = z W1 + b1; z2 = LN(z1); z3 = dropout(z2); z4 = sigmoid(z3);
/// logit = z4 W2 + b2. One row per graph, one logit column.
template <class T>
Tensor<T> classify(const Tensor<T>& z, const HeadParams<T>& head, RngStream& rng, Mode mode) {
    auto z1 = ad::add_rowvec(ad::matmul(z, head.w1), head.b1);
    auto z2 = ad::layer_norm(z1, head.gamma, head.beta);
    auto z3 = ad::dropout(z2, head.dropout, rng, mode);
    auto z4 = ad::sigmoid(z3);
    return ad::add_rowvec(ad::matmul(z4, head.w2), head.b2);
}

/// Full network over a batch; returns num_graphs x 1 logits. In Train mode one
/// mask sample is drawn per call and shared by every graph in the batch.
template <class T>
Tensor<T> forward(const GraphBatch<T>& batch, const ModelParams<T>& params, RngStream& rng, Mode mode) {
    if (batch.dim != params.input_dim())
        throw ConfigError("graph features have dimension " + std::to_string(batch.dim) + ", model expects " +
                          std::to_string(params.input_dim()));
    const EdgeList<T> edges{batch.src, batch.dst, batch.weight};
    const auto x = Tensor<T>::constant({batch.num_nodes, batch.dim}, batch.features);
    const auto m = gumbel_sigmoid_mask(params.mask, rng, mode);
    auto h = apply_mask(x, m);
    for (const auto& layer : params.layers) h = encode_layer(layer, h, edges, params.edge_mode);
    const auto z = pool_graph(h, batch.graph_ids, batch.num_graphs);
    return classify(z, params.head, rng, mode);
}

template <class T>
T forward_logit(const HierGraph& graph, const ModelParams<T>& params, RngStream& rng, Mode mode) {
    return forward(GraphBatch<T>::of(graph), params, rng, mode).item();
}

// ---------------------------------------------------------------------------
// Checkpoints: "HPCK", u32 version, u32 metadata length, metadata JSON, u32
// block count, then per block u32 name length, name, u32 rank, u32 dims,
// f64 values. Little-endian; byte layout depends only on the parameters.
// ---------------------------------------------------------------------------

namespace checkpoint_format {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct Reader {
    const std::string& in;
    std::size_t off = 0;
    void need(std::size_t n) const {
        if (off + n > in.size()) throw CorruptionError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)])) << (8 * i);
        off += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)])) << (8 * i);
        off += 8;
        double d;
        std::memcpy(&d, &bits, sizeof d);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        auto s = in.substr(off, n);
        off += n;
        return s;
    }
};

}  // namespace checkpoint_format

template <class T>
[[nodiscard]] std::string encode_checkpoint(const ModelParams<T>& p, nlohmann::json meta = nlohmann::json::object()) {
    using checkpoint_format::put_u32;
    meta["tau"] = p.mask.tau;
    meta["dropout"] = p.head.dropout;
    meta["edge_weight_mode"] = edge_mode_flag(p.edge_mode);
    const std::string meta_s = meta.dump();
    std::string out = "HPCK";
    put_u32(out, 1);
    put_u32(out, static_cast<std::uint32_t>(meta_s.size()));
    out += meta_s;
    const auto named = p.named();
    put_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (T v : t.value()) {
            const double d = static_cast<double>(v);
            std::uint64_t bits;
            std::memcpy(&bits, &d, sizeof bits);
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }
    }
    return out;
}

template <class T>
struct Checkpoint {
    ModelParams<T> params;
    nlohmann::json meta;
};

template <class T>
[[nodiscard]] Checkpoint<T> decode_checkpoint(const std::string& in) {
    if (in.size() < 4 || in.compare(0, 4, "HPCK") != 0) throw FormatError("checkpoint: bad magic");
    checkpoint_format::Reader r{in, 4};
    if (const auto v = r.u32(); v != 1) throw FormatError("checkpoint: unsupported version " + std::to_string(v));
    Checkpoint<T> ck;
    ck.meta = nlohmann::json::parse(r.bytes(r.u32()));
    std::map<std::string, Tensor<T>> blocks;
    const auto count = r.u32();
    for (std::uint32_t b = 0; b < count; ++b) {
        const auto name = r.bytes(r.u32());
        ad::Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        std::vector<T> values(ad::shape_size(shape));
        for (auto& v : values) v = static_cast<T>(r.f64());
        blocks.emplace(name, Tensor<T>::parameter(std::move(shape), std::move(values)));
    }
    if (r.off != in.size()) throw CorruptionError("checkpoint: trailing bytes");

    auto& p = ck.params;
    auto take = [&](const std::string& name) {
        auto it = blocks.find(name);
        if (it == blocks.end()) throw FormatError("checkpoint: missing block '" + name + "'");
        return it->second;
    };
    p.mask.s = take("mask.s");
    p.mask.tau = ck.meta.at("tau").template get<double>();
    p.head.dropout = ck.meta.at("dropout").template get<double>();
    p.edge_mode = parse_edge_mode(ck.meta.at("edge_weight_mode").template get<std::string>());
    for (std::size_t l = 0; l < 2; ++l) {
        const auto pre = "layer" + std::to_string(l) + ".";
        auto& L = p.layers[l];
        L.w_self = take(pre + "w_self");
        L.w_value = take(pre + "w_value");
        L.w_query = take(pre + "w_query");
        L.w_key = take(pre + "w_key");
        L.w_res = take(pre + "w_res");
        L.gamma = take(pre + "gamma");
        L.beta = take(pre + "beta");
    }
    p.head.w1 = take("head.w1");
    p.head.b1 = take("head.b1");
    p.head.gamma = take("head.gamma");
    p.head.beta = take("head.beta");
    p.head.w2 = take("head.w2");
    p.head.b2 = take("head.b2");
    return ck;
}

template <class T>
void write_checkpoint(const std::filesystem::path& path, const ModelParams<T>& p, nlohmann::json meta = nlohmann::json::object()) {
    const auto bytes = encode_checkpoint(p, std::move(meta));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
[[nodiscard]] Checkpoint<T> read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint<T>(detail::read_file(path));
}

}  // namespace hyperpersona
