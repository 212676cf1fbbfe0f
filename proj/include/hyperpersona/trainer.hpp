#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "hiergraph.hpp"
#include "model.hpp"
#include "tensor.hpp"
#include "util.hpp"

namespace hyperpersona {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean over samples of max(l, 0) - l*y + log(1 + exp(-|l|)).
/// d/dl = (sigmoid(l) - y) / N.
template <class T>
Tensor<T> bce_loss(const Tensor<T>& logits, std::span<const T> labels) {
    const std::size_t n = logits.size();
    if (n == 0) throw ContractError("bce_loss: no samples");
    if (labels.size() != n)
        throw DimensionError("bce_loss: " + std::to_string(n) + " logits, " + std::to_string(labels.size()) + " labels");
    for (T y : labels)
        if (y != T(0) && y != T(1)) throw ContractError("bce_loss: labels must be 0 or 1");
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T l = logits.value()[i];
        acc += std::max(l, T(0)) - l * labels[i] + std::log1p(std::exp(-std::abs(l)));
    }
    std::vector<T> y(labels.begin(), labels.end());
    return ad::detail::make_result<T>("bce_loss", {}, {acc / static_cast<T>(n)}, {logits}, [y = std::move(y)](ad::Node<T>& self) {
        if (T* g = ad::detail::parent_grad(self, 0)) {
            const T inv_n = T(1) / static_cast<T>(y.size());
            for (std::size_t i = 0; i < y.size(); ++i)
                g[i] += self.grad[0] * (ad::detail::sigmoid_scalar(self.parents[0]->value[i]) - y[i]) * inv_n;
        }
    });
}

template <class T>
T bce_loss_value(std::span<const T> logits, std::span<const T> labels) {
    return bce_loss(Tensor<T>::constant({logits.size()}, {logits.begin(), logits.end()}), labels).item();
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWConfig {
    double learning_rate = 3e-4;
    double weight_decay = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
struct OptimizerState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;
};

/// Decoupled weight decay (theta -= lr*wd*theta) followed by the
/// bias-corrected Adam step. All gradients are checked for finiteness before
/// any parameter changes.
template <class T>
void adamw_step(std::span<Tensor<T>> params, std::span<const std::vector<T>> grads, OptimizerState<T>& state,
                const AdamWConfig& cfg) {
    if (grads.size() != params.size()) throw DimensionError("adamw_step: parameter/gradient count mismatch");
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (grads[p].size() != params[p].size()) throw DimensionError("adamw_step: gradient shape mismatch");
        for (T g : grads[p])
            if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient");
    }
    if (state.m.empty()) {
        for (const auto& t : params) {
            state.m.emplace_back(t.size(), T(0));
            state.v.emplace_back(t.size(), T(0));
        }
    }
    if (state.m.size() != params.size()) throw DimensionError("adamw_step: optimizer state does not match parameters");

    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const T lr = static_cast<T>(cfg.learning_rate), decay = static_cast<T>(cfg.learning_rate * cfg.weight_decay);
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), eps = static_cast<T>(cfg.eps);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto theta = params[p].value_mut();
        auto& m = state.m[p];
        auto& v = state.v[p];
        const auto& g = grads[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            theta[i] -= decay * theta[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / static_cast<T>(bc1);
            const T vhat = v[i] / static_cast<T>(bc2);
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

template <class T>
struct LabeledBatch {
    GraphBatch<T> graphs;
    std::vector<T> labels;
    std::vector<std::size_t> members;  // indices into the input sequence
};

/// Shuffles graph order with `rng` and packs consecutive runs of `batch_size`
/// graphs into disjoint unions; the last batch may be short.
template <class T>
std::vector<LabeledBatch<T>> make_batches(std::span<const HierGraph> graphs, std::span<const T> labels,
                                          std::size_t batch_size, RngStream& rng) {
    if (graphs.empty()) throw ContractError("make_batches: no graphs");
    if (labels.size() != graphs.size()) throw DimensionError("make_batches: label count mismatch");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<std::size_t> order(graphs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_in_place(order, rng);
    std::vector<LabeledBatch<T>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        LabeledBatch<T> b;
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
            b.graphs.append(graphs[order[i]]);
            b.labels.push_back(labels[order[i]]);
            b.members.push_back(order[i]);
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    double learning_rate = 3e-4;
    double weight_decay = 3e-4;
    double dropout = 0.2;
    double tau = 1.0;
    bool tau_anneal = false;  // exponential decay from tau to tau_min over the epochs
    double tau_min = 0.1;
    double clip_norm = 0.0;  // 0 disables global-norm clipping
    std::uint64_t seed = 0;
    LevelConfig level = LevelConfig::Full;
    EdgeWeightMode edge_mode = EdgeWeightMode::ScaleMessage;
    std::array<std::size_t, 2> hidden = {128, 64};
    std::size_t latent = 16;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size must be positive");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
        if (!(tau > 0.0) || !(tau_min > 0.0)) throw ConfigError("tau must be positive");
        if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
    }

    [[nodiscard]] double tau_at(std::size_t epoch) const {
        if (!tau_anneal || epochs == 1) return tau;
        const double frac = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
        return tau * std::pow(tau_min / tau, frac);
    }

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"epochs", epochs},           {"batch_size", batch_size}, {"learning_rate", learning_rate},
                {"weight_decay", weight_decay}, {"dropout", dropout},      {"tau", tau},
                {"tau_anneal", tau_anneal},   {"tau_min", tau_min},       {"clip_norm", clip_norm},
                {"seed", seed},               {"levels", level_flag(level)}, {"edge_weight_mode", edge_mode_flag(edge_mode)},
                {"hidden", hidden},           {"latent", latent}};
    }

    /// Overlays the keys present in `j` onto this config.
    void merge(const nlohmann::json& j) {
        auto get = [&](const char* k, auto& dst) {
            if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
        };
        get("epochs", epochs);
        get("batch_size", batch_size);
        get("learning_rate", learning_rate);
        get("weight_decay", weight_decay);
        get("dropout", dropout);
        get("tau", tau);
        get("tau_anneal", tau_anneal);
        get("tau_min", tau_min);
        get("clip_norm", clip_norm);
        get("seed", seed);
        get("hidden", hidden);
        get("latent", latent);
        if (j.contains("levels")) level = parse_level(j.at("levels").get<std::string>());
        if (j.contains("edge_weight_mode")) edge_mode = parse_edge_mode(j.at("edge_weight_mode").get<std::string>());
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    std::optional<double> heldout_accuracy;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    /// One JSON object per epoch. Wall-clock is included only on request so
    /// that histories of identical runs compare equal.
    [[nodiscard]] std::string to_jsonl(bool with_timing = true) const {
        std::string out;
        for (const auto& e : epochs) {
            nlohmann::json j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
            j["heldout_accuracy"] = e.heldout_accuracy ? nlohmann::json(*e.heldout_accuracy) : nlohmann::json(nullptr);
            if (with_timing) j["seconds"] = e.seconds;
            out += j.dump() + "\n";
        }
        return out;
    }
};

template <class T>
struct TrainResult {
    ModelParams<T> params;
    TrainHistory history;
};

struct Prediction {
    double probability = 0.0;
    bool label = false;
};

/// Eval-mode probability; positive iff probability >= 0.5.
template <class T>
Prediction predict(const ModelParams<T>& params, const HierGraph& graph) {
    RngStream unused;
    const double logit = static_cast<double>(forward_logit(graph, params, unused, Mode::Eval));
    const double p = ad::detail::sigmoid_scalar(logit);
    return {p, p >= 0.5};
}

template <class T>
std::vector<Prediction> predict_all(const ModelParams<T>& params, std::span<const HierGraph> graphs, std::size_t batch_size = 32) {
    std::vector<Prediction> out;
    RngStream unused;
    for (std::size_t start = 0; start < graphs.size(); start += batch_size) {
        GraphBatch<T> b;
        for (std::size_t i = start; i < std::min(graphs.size(), start + batch_size); ++i) b.append(graphs[i]);
        const auto logits = forward(b, params, unused, Mode::Eval);
        for (T l : logits.value()) {
            const double p = ad::detail::sigmoid_scalar(static_cast<double>(l));
            out.push_back({p, p >= 0.5});
        }
    }
    return out;
}

template <class T>
double accuracy_of(const ModelParams<T>& params, std::span<const HierGraph> graphs, std::span<const T> labels) {
    const auto preds = predict_all(params, graphs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += (preds[i].label == (labels[i] == T(1)));
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

template <class T>
struct HeldOut {
    std::span<const HierGraph> graphs;
    std::span<const T> labels;
};

/// Trains one binary head for one trait. Streams derived from config.seed:
/// split(1) initializes parameters, split(2).split(epoch) shuffles, and
/// split(3).split(step) drives mask noise and dropout.
template <class T>
TrainResult<T> train_trait(std::span<const HierGraph> graphs, std::span<const T> labels, const TrainConfig& config,
                           std::optional<HeldOut<T>> heldout = std::nullopt) {
    config.validate();
    if (graphs.size() < 2) throw ContractError("train_trait: need at least two examples");
    if (labels.size() != graphs.size()) throw DimensionError("train_trait: label count mismatch");
    bool any_pos = false, any_neg = false;
    for (T y : labels) (y == T(1) ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg) throw ContractError("train_trait: training labels contain a single class");

    const RngStream root(config.seed);
    ModelShape shape{graphs.front().dim(), config.hidden, config.latent};
    TrainResult<T> result{init_params<T>(shape, root.split(1).seed(), config.tau, config.dropout, config.edge_mode), {}};
    auto& params = result.params;
    auto tensors = params.parameters();
    OptimizerState<T> state;
    const AdamWConfig opt{config.learning_rate, config.weight_decay};
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        params.mask.tau = config.tau_at(epoch);
        RngStream shuffle = root.split(2).split(epoch);
        const auto batches = make_batches<T>(graphs, labels, config.batch_size, shuffle);
        double loss_sum = 0.0;
        for (const auto& batch : batches) {
            RngStream noise = root.split(3).split(step++);
            for (auto& t : tensors) t.zero_grad();
            const auto logits = forward(batch.graphs, params, noise, Mode::Train);
            const auto loss = bce_loss<T>(logits, batch.labels);
            ad::backward(loss);
            loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.labels.size());

            std::vector<std::vector<T>> grads;
            for (const auto& t : tensors) grads.emplace_back(t.grad().begin(), t.grad().end());
            if (config.clip_norm > 0.0) {
                double sq = 0.0;
                for (const auto& g : grads)
                    for (T x : g) sq += static_cast<double>(x) * static_cast<double>(x);
                const double norm = std::sqrt(sq);
                if (norm > config.clip_norm) {
                    const T f = static_cast<T>(config.clip_norm / norm);
                    for (auto& g : grads)
                        for (T& x : g) x *= f;
                }
            }
            adamw_step<T>(tensors, grads, state, opt);
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / static_cast<double>(graphs.size());
        if (heldout && !heldout->graphs.empty()) rec.heldout_accuracy = accuracy_of(params, heldout->graphs, heldout->labels);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.epochs.push_back(rec);
    }
    return result;
}

}  // namespace hyperpersona
