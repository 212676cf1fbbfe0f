#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "support.hpp"

using namespace hyperpersona;
using namespace hp_test;
using Catch::Matchers::WithinAbs;
using TD = ad::Tensor<double>;

namespace {

EncoderLayerParams<double> scalar_layer(double w_self, double w_value, double w_query, double w_key) {
    EncoderLayerParams<double> L;
    L.w_self = TD::parameter({1, 1}, {w_self});
    L.w_value = TD::parameter({1, 1}, {w_value});
    L.w_query = TD::parameter({1, 1}, {w_query});
    L.w_key = TD::parameter({1, 1}, {w_key});
    L.w_res = TD::parameter({1, 1}, {0.0});
    L.gamma = TD::parameter({1}, {1.0});
    L.beta = TD::parameter({1}, {0.0});
    return L;
}

EncoderLayerParams<double> zero_layer(std::size_t in, std::size_t out) {
    EncoderLayerParams<double> L;
    for (auto* t : {&L.w_self, &L.w_value, &L.w_query, &L.w_key, &L.w_res}) *t = TD::zeros({in, out}, true);
    L.gamma = TD::zeros({out}, true);
    L.beta = TD::zeros({out}, true);
    return L;
}

struct Edges {
    std::vector<std::size_t> src, dst;
    std::vector<double> weight;
    EdgeList<double> view() const { return {src, dst, weight}; }
};

std::vector<double> values(const TD& t) { return {t.value().begin(), t.value().end()}; }

// Largest relative error between backward and central differences over every
// parameter tensor of `p`. Gradients below 1e-6 are compared absolutely.
template <class Loss>
double worst_gradient_error(ModelParams<double>& p, Loss loss) {
    for (auto& t : p.parameters()) t.zero_grad();
    ad::backward(loss());
    double worst = 0.0;
    for (auto& [name, t] : p.named()) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto probe = t;
        const auto numeric = ad::finite_diff_grad<double>([&](const TD&) { return loss().item(); }, probe, 1e-5);
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double e = ad::relative_error(analytic[i], numeric[i], 1e-6);
            if (e > worst) {
                worst = e;
                UNSCOPED_INFO(name << "[" << i << "] analytic " << analytic[i] << " numeric " << numeric[i]);
            }
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("eval-mode mask values") {
    RngStream rng(1);
    FeatureMaskParams<double> m{TD::parameter({3}, {0.0, 2.0, -2.0}), 1.0};
    const auto v = gumbel_sigmoid_mask(m, rng, Mode::Eval);
    CHECK(v.value()[0] == 0.5);
    CHECK(rng.counter() == 0);

    m.tau = 0.01;
    const auto sharp = gumbel_sigmoid_mask(m, rng, Mode::Eval);
    CHECK(sharp.value()[1] >= 1.0 - 1e-3);
    CHECK(sharp.value()[2] <= 1e-3);

    m.tau = 0.0;
    CHECK_THROWS_AS(gumbel_sigmoid_mask(m, rng, Mode::Eval), ConfigError);
}

TEST_CASE("train-mode mask mean matches the Gumbel expectation") {
    FeatureMaskParams<double> m{TD::parameter({1000}, std::vector<double>(1000, 0.0)), 1.0};
    RngStream rng(2024);
    double total = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const auto v = gumbel_sigmoid_mask(m, rng, Mode::Train);
        for (double x : v.value()) {
            total += x;
            REQUIRE((x > 0.0 && x < 1.0));
        }
    }
    CHECK_THAT(total / 1e5, WithinAbs(0.596, 0.005));
}

TEST_CASE("mask gradient flows through the sigmoid only") {
    FeatureMaskParams<double> m{TD::parameter({2}, {0.3, -0.4}), 0.5};
    RngStream rng(3);
    const auto v = gumbel_sigmoid_mask(m, rng, Mode::Train);
    ad::backward(ad::sum(v));
    for (int j = 0; j < 2; ++j) {
        const double s = v.value()[j];
        CHECK_THAT(m.s.grad()[j], WithinAbs(s * (1 - s) / 0.5, 1e-12));
    }
}

TEST_CASE("apply_mask examples") {
    const auto x = TD::constant({2, 2}, {3, 5, -1, 2});
    CHECK(values(apply_mask(x, TD::constant({2}, {1, 1}))) == values(x));
    CHECK(values(apply_mask(x, TD::constant({2}, {0, 0}))) == std::vector<double>{0, 0, 0, 0});
    CHECK(values(apply_mask(x, TD::constant({2}, {1, 0}))) == std::vector<double>{3, 0, -1, 0});
    CHECK_THROWS_AS(apply_mask(x, TD::constant({3}, {1, 1, 1})), DimensionError);
}

TEST_CASE("single neighbour gets all the attention") {
    const auto L = scalar_layer(0.0, 1.0, 0.7, -1.3);
    const auto h = TD::constant({2, 1}, {0.4, 2.5});
    Edges e{{1}, {0}, {1.0}};
    const auto a = attention_coefficients(L, h, e.view());
    CHECK(a.value()[0] == 1.0);
    CHECK(transformer_conv(L, h, e.view())(0, 0) == 2.5);
    // node 1 has no in-edges and keeps only its (zero) self term
    CHECK(transformer_conv(L, h, e.view())(1, 0) == 0.0);
}

TEST_CASE("symmetric neighbours split attention evenly") {
    const auto L = scalar_layer(0.0, 1.0, 0.9, 0.4);
    const auto h = TD::constant({3, 1}, {1.0, 2.0, 2.0});
    Edges e{{1, 2}, {0, 0}, {0.6, 0.6}};
    const auto a = attention_coefficients(L, h, e.view());
    CHECK(a.value()[0] == 0.5);
    CHECK(a.value()[1] == 0.5);
}

TEST_CASE("scalar attention example") {
    // scores x_i x_j = (1, 2), alpha = softmax(1, 2)
    const auto L = scalar_layer(0.0, 1.0, 1.0, 1.0);
    const auto h = TD::constant({3, 1}, {1.0, 1.0, 2.0});
    Edges e{{1, 2}, {0, 0}, {1.0, 1.0}};
    const auto a = attention_coefficients(L, h, e.view());
    CHECK_THAT(a.value()[0], WithinAbs(0.2689, 1e-4));
    CHECK_THAT(a.value()[1], WithinAbs(0.7311, 1e-4));
    CHECK_THAT(transformer_conv(L, h, e.view())(0, 0), WithinAbs(1.7311, 1e-4));
}

TEST_CASE("edge weight modes") {
    const auto L = scalar_layer(0.5, 1.0, 1.0, 1.0);
    const auto h = TD::constant({2, 1}, {1.0, 3.0});
    Edges e{{1}, {0}, {0.25}};
    CHECK(transformer_conv(L, h, e.view(), EdgeWeightMode::ScaleMessage)(0, 0) == 0.5 + 0.25 * 3.0);
    CHECK(transformer_conv(L, h, e.view(), EdgeWeightMode::StructuralOnly)(0, 0) == 0.5 + 3.0);
    CHECK(parse_edge_mode(edge_mode_flag(EdgeWeightMode::StructuralOnly)) == EdgeWeightMode::StructuralOnly);
    CHECK_THROWS_AS(parse_edge_mode("none"), ConfigError);
}

TEST_CASE("out-of-range endpoints are index errors") {
    const auto L = scalar_layer(0.0, 1.0, 1.0, 1.0);
    Edges e{{5}, {0}, {1.0}};
    CHECK_THROWS_AS(transformer_conv(L, TD::constant({2, 1}, {1, 2}), e.view()), IndexError);
}

TEST_CASE("attention sums to one per destination") {
    const auto g = toy_graph(kToyText, 8, 4);
    const auto b = GraphBatch<double>::of(g);
    const auto p = small_model<double>(8, 5);
    const auto h = TD::constant({b.num_nodes, b.dim}, b.features);
    const auto a = attention_coefficients(p.layers[0], h, EdgeList<double>{b.src, b.dst, b.weight});
    std::vector<double> totals(b.num_nodes, 0.0);
    for (std::size_t i = 0; i < b.dst.size(); ++i) totals[b.dst[i]] += a.value()[i];
    for (double t : totals) CHECK_THAT(t, WithinAbs(1.0, 1e-9));
}

TEST_CASE("encode_layer output bounds") {
    const auto g = toy_graph(kToyText, 8, 6);
    const auto b = GraphBatch<double>::of(g);
    const auto p = small_model<double>(8, 7);
    const auto h = encode_layer(p.layers[0], TD::constant({b.num_nodes, b.dim}, b.features), EdgeList<double>{b.src, b.dst, b.weight});
    CHECK(h.shape() == ad::Shape{b.num_nodes, 6});
    for (double v : h.value()) CHECK((v > 0.0 && v < 1.0));

    const auto zero = encode_layer(zero_layer(8, 6), TD::constant({b.num_nodes, b.dim}, b.features), EdgeList<double>{b.src, b.dst, b.weight});
    for (double v : zero.value()) CHECK(v == 0.5);
}

TEST_CASE("encode_layer adds the residual and self terms") {
    // one isolated node: pre-activation = x (W_res + W_self)
    auto L = zero_layer(2, 2);
    L.w_res = TD::parameter({2, 2}, {1, 0, 0, 2});
    L.w_self = TD::parameter({2, 2}, {0, 1, 0, 0});
    L.gamma = TD::parameter({2}, {1, 1});
    const auto out = encode_layer(L, TD::constant({1, 2}, {3, 1}), Edges{}.view());
    // pre = (3, 3 + 2) = (3, 5) -> LN -> (-1, 1) up to eps
    const double z = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK_THAT(out(0, 0), WithinAbs(1.0 / (1.0 + std::exp(z)), 1e-12));
    CHECK_THAT(out(0, 1), WithinAbs(1.0 / (1.0 + std::exp(-z)), 1e-12));
}

TEST_CASE("pooling examples") {
    const auto h = TD::constant({3, 2}, {1, 10, 2, 20, 7, 70});
    const auto z = pool_graph(h, {0, 0, 1}, 2);
    CHECK(values(z) == std::vector<double>{3, 30, 7, 70});
    const auto swapped = pool_graph(TD::constant({3, 2}, {2, 20, 1, 10, 7, 70}), {0, 0, 1}, 2);
    CHECK(values(swapped) == values(z));
}

TEST_CASE("zero head gives a zero logit") {
    HeadParams<double> head;
    head.w1 = TD::zeros({4, 3}, true);
    head.b1 = TD::zeros({3}, true);
    head.gamma = TD::zeros({3}, true);
    head.beta = TD::zeros({3}, true);
    head.w2 = TD::zeros({3, 1}, true);
    head.b2 = TD::zeros({1}, true);
    RngStream rng(0);
    CHECK(classify(TD::constant({1, 4}, {1, 2, 3, 4}), head, rng, Mode::Eval).item() == 0.0);
    CHECK(classify(TD::constant({1, 4}, {1, 2, 3, 4}), head, rng, Mode::Train).item() == 0.0);
}

TEST_CASE("eval forward is deterministic") {
    const auto g = toy_graph(kToyText, 8, 8);
    const auto p = small_model<double>(8, 9);
    RngStream a(1), b(2);
    CHECK(forward_logit(g, p, a, Mode::Eval) == forward_logit(g, p, b, Mode::Eval));
    const auto f = small_model<float>(8, 9);
    CHECK(forward_logit(g, f, a, Mode::Eval) == forward_logit(g, f, b, Mode::Eval));
}

TEST_CASE("train forward depends on the noise stream") {
    const auto g = toy_graph(kToyText, 8, 8);
    const auto p = small_model<double>(8, 9);
    RngStream a(1), a2(1), b(2);
    const double x = forward_logit(g, p, a, Mode::Train);
    CHECK(x == forward_logit(g, p, a2, Mode::Train));
    CHECK(x != forward_logit(g, p, b, Mode::Train));
}

TEST_CASE("node relabelling leaves the logit unchanged") {
    const auto g = toy_graph(kToyText, 8, 10);
    auto p = small_model<double>(8, 11);
    randomize(p, 12);
    RngStream unused;
    const double base = forward_logit(g, p, unused, Mode::Eval);
    RngStream perm_rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const auto perm = random_permutation(g.nodes.size(), perm_rng);
        CHECK_THAT(forward_logit(relabel(g, perm), p, unused, Mode::Eval), WithinAbs(base, 1e-6));
    }
}

TEST_CASE("batched forward equals per-graph forward") {
    std::vector<HierGraph> gs = {toy_graph(kToyText, 8, 14, LevelConfig::Full, "a"),
                                 toy_graph("Short one. Two.", 8, 14, LevelConfig::Full, "b"),
                                 toy_graph("Just words here", 8, 14, LevelConfig::Full, "c")};
    const auto p = small_model<double>(8, 15);
    GraphBatch<double> batch;
    for (const auto& g : gs) batch.append(g);
    RngStream unused;
    const auto logits = forward(batch, p, unused, Mode::Eval);
    REQUIRE(logits.size() == 3);
    for (std::size_t i = 0; i < gs.size(); ++i) CHECK_THAT(logits.value()[i], WithinAbs(forward_logit(gs[i], p, unused, Mode::Eval), 1e-6));
}

TEST_CASE("graph batch rejects mismatched inputs") {
    const auto p = small_model<double>(8, 15);
    RngStream unused;
    CHECK_THROWS_AS(forward_logit(toy_graph(kToyText, 6, 1), p, unused, Mode::Eval), ConfigError);
    GraphBatch<double> b;
    b.append(toy_graph(kToyText, 8, 1));
    CHECK_THROWS_AS(b.append(toy_graph(kToyText, 6, 1)), DimensionError);
    HierGraph bad = toy_graph(kToyText, 8, 1);
    bad.edges.push_back({0, 99, 1.0});
    CHECK_THROWS_AS(GraphBatch<double>::of(bad), IndexError);
}

TEST_CASE("init_params follows the initialization rules") {
    const auto p = init_params<double>(ModelShape{10, {6, 5}, 4}, 3);
    for (double v : p.mask.s.value()) CHECK(v == 0.5);
    const double bound = std::sqrt(6.0 / 16.0);
    for (double v : p.layers[0].w_query.value()) CHECK(std::abs(v) <= bound);
    for (double v : p.layers[1].gamma.value()) CHECK(v == 1.0);
    for (double v : p.head.b1.value()) CHECK(v == 0.0);
    CHECK(p.layers[1].w_self.shape() == ad::Shape{6, 5});
    CHECK(p.head.w2.shape() == ad::Shape{4, 1});
    CHECK(p.named().size() == 1 + 2 * 7 + 6);
    CHECK_THROWS_AS(init_params<double>(ModelShape{0, {6, 5}, 4}, 3), ConfigError);
}

TEST_CASE("checkpoints round-trip exactly") {
    auto p = init_params<double>(ModelShape{8, {6, 5}, 4}, 3, 0.7, 0.1, EdgeWeightMode::StructuralOnly);
    randomize(p, 4);
    const auto path = std::filesystem::temp_directory_path() / "hp_model.hpck";
    write_checkpoint(path, p, {{"trait", "O"}});
    const auto ck = read_checkpoint<double>(path);
    CHECK(ck.meta["trait"] == "O");
    CHECK(ck.params.mask.tau == 0.7);
    CHECK(ck.params.head.dropout == 0.1);
    CHECK(ck.params.edge_mode == EdgeWeightMode::StructuralOnly);
    const auto a = p.named(), b = ck.params.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(values(a[i].second) == values(b[i].second));
    }
    CHECK(encode_checkpoint(ck.params, {{"trait", "O"}}) == encode_checkpoint(p, {{"trait", "O"}}));

    auto bytes = encode_checkpoint(p);
    CHECK_THROWS_AS(decode_checkpoint<double>(bytes + "z"), CorruptionError);
    bytes[1] = 'Q';
    CHECK_THROWS_AS(decode_checkpoint<double>(bytes), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("clone is deep") {
    auto p = small_model<double>(4, 1);
    auto c = p.clone();
    c.mask.s.value_mut()[0] = 9.0;
    CHECK(p.mask.s.value()[0] == 0.5);
}

TEST_CASE("layer gradients match finite differences") {
    const auto g = toy_graph(kToyText, 5, 16);
    const auto b = GraphBatch<double>::of(g);
    auto p = small_model<double>(5, 17);
    randomize(p, 18);
    const auto x = TD::constant({b.num_nodes, b.dim}, b.features);
    const EdgeList<double> edges{b.src, b.dst, b.weight};
    const auto readout = TD::constant({b.num_nodes, 6}, std::vector<double>(b.num_nodes * 6, 0.37));
    auto loss = [&] { return ad::sum(ad::mul(encode_layer(p.layers[0], x, edges), readout)); };
    CHECK(worst_gradient_error(p, loss) <= 1e-4);
}

TEST_CASE("end-to-end gradients match finite differences") {
    std::vector<HierGraph> gs = {toy_graph(kToyText, 6, 19, LevelConfig::Full, "a"),
                                 toy_graph("Another small text. With two sentences.", 6, 19, LevelConfig::Full, "b")};
    GraphBatch<double> batch;
    for (const auto& g : gs) batch.append(g);
    auto p = small_model<double>(6, 20);
    const std::vector<double> y = {1.0, 0.0};
    auto loss = [&] {
        RngStream rng(21);
        return bce_loss<double>(forward(batch, p, rng, Mode::Train), y);
    };
    CHECK(worst_gradient_error(p, loss) <= 1e-4);
}
