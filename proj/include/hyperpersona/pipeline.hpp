#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"
#include "embedding.hpp"
#include "hiergraph.hpp"
#include "hypergraph.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "segmenter.hpp"
#include "trainer.hpp"
#include "util.hpp"

namespace hyperpersona {

/// Error raised by a pipeline stage; what() reads "[stage] cause".
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause) : Error("[" + stage + "] " + cause), stage_(std::move(stage)) {}
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Runs `fn`, rethrowing any library error tagged with `stage`.
template <class F>
decltype(auto) in_stage(const std::string& stage, F&& fn) {
    try {
        return std::forward<F>(fn)();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

enum class EmbeddingMode : std::uint8_t { Hash, Import };
enum class Precision : std::uint8_t { F32, F64 };

struct RunConfig {
    std::filesystem::path corpus;
    std::filesystem::path bundles;  // import mode only
    std::filesystem::path workdir;  // empty: nothing is written
    ColumnMap column_map;
    EmbeddingMode embedding = EmbeddingMode::Hash;
    std::uint32_t dim = 96;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    std::optional<Trait> stratify;  // one split for all traits, balanced on this one
    std::vector<Trait> traits = {kAllTraits.begin(), kAllTraits.end()};
    Precision precision = Precision::F32;
    bool use_cache = true;
    TrainConfig train;

    /// Training seed for one trait, derived from the run seed.
    [[nodiscard]] std::uint64_t trait_seed(Trait t) const {
        return RngStream(seed).split(0x100 + static_cast<std::uint64_t>(t)).seed();
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j = train.to_json();
        j.erase("seed");
        j["corpus"] = corpus.string();
        j["bundles"] = bundles.string();
        j["workdir"] = workdir.string();
        j["column_map"] = column_map.to_json();
        j["embedding"] = embedding == EmbeddingMode::Hash ? "hash" : "import";
        j["dim"] = dim;
        j["seed"] = seed;
        j["train_fraction"] = train_fraction;
        j["stratify"] = stratify ? std::string(1, trait_letter(*stratify)) : std::string();
        std::string letters;
        for (Trait t : traits) letters += trait_letter(t);
        j["traits"] = letters;
        j["precision"] = precision == Precision::F32 ? "f32" : "f64";
        j["use_cache"] = use_cache;
        return j;
    }

    /// Overlays the keys present in `j`. Unknown keys are rejected.
    void merge(const nlohmann::json& j) {
        static constexpr std::array<std::string_view, 12> own = {"corpus", "bundles",   "workdir",   "column_map", "embedding", "dim",
                                                                 "seed",   "train_fraction", "stratify", "traits", "precision", "use_cache"};
        const auto train_keys = TrainConfig{}.to_json();
        if (!j.is_object()) throw ConfigError("run config must be a JSON object");
        for (const auto& [k, v] : j.items())
            if (std::find(own.begin(), own.end(), k) == own.end() && !train_keys.contains(k))
                throw ConfigError("unknown config key '" + k + "'");
        try {
            if (j.contains("corpus")) corpus = j.at("corpus").get<std::string>();
            if (j.contains("bundles")) bundles = j.at("bundles").get<std::string>();
            if (j.contains("workdir")) workdir = j.at("workdir").get<std::string>();
            if (j.contains("column_map")) column_map = ColumnMap::from_json(j.at("column_map"));
            if (j.contains("embedding")) {
                const auto m = j.at("embedding").get<std::string>();
                if (m == "hash") embedding = EmbeddingMode::Hash;
                else if (m == "import") embedding = EmbeddingMode::Import;
                else throw ConfigError("embedding must be 'hash' or 'import', got '" + m + "'");
            }
            if (j.contains("dim")) dim = j.at("dim").get<std::uint32_t>();
            if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
            if (j.contains("train_fraction")) train_fraction = j.at("train_fraction").get<double>();
            if (j.contains("stratify")) {
                const auto t = j.at("stratify").get<std::string>();
                stratify = t.empty() ? std::nullopt : std::optional<Trait>(parse_trait(t));
            }
            if (j.contains("traits")) {
                traits.clear();
                for (char c : j.at("traits").get<std::string>()) traits.push_back(parse_trait(std::string_view(&c, 1)));
            }
            if (j.contains("precision")) {
                const auto p = j.at("precision").get<std::string>();
                if (p == "f32") precision = Precision::F32;
                else if (p == "f64") precision = Precision::F64;
                else throw ConfigError("precision must be 'f32' or 'f64', got '" + p + "'");
            }
            if (j.contains("use_cache")) use_cache = j.at("use_cache").get<bool>();
            nlohmann::json tj = j;
            tj.erase("seed");
            train.merge(tj);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
    }

    /// `key=value`; the value is parsed as JSON when possible, else taken as a string.
    void set(std::string_view assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
        const std::string key(assignment.substr(0, eq));
        const std::string raw(assignment.substr(eq + 1));
        nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        if (key.starts_with("column_map.")) {
            auto cm = column_map.to_json();
            cm[key.substr(11)] = value;
            merge({{"column_map", cm}});
            return;
        }
        merge({{key, value}});
    }

    void validate() const {
        train.validate();
        if (dim < 2 && embedding == EmbeddingMode::Hash) throw ConfigError("dim must be at least 2");
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0,1)");
        if (traits.empty()) throw ConfigError("no traits selected");
    }
};

/// Loads a JSON config file and applies `--set` overrides in order.
[[nodiscard]] inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                               const std::vector<std::string>& overrides = {}) {
    RunConfig cfg;
    if (file) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(detail::read_file(*file));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("cannot parse '" + file->string() + "': " + e.what());
        }
        cfg.merge(j);
    }
    for (const auto& o : overrides) cfg.set(o);
    return cfg;
}

// ---------------------------------------------------------------------------
// Dataset statistics
// ---------------------------------------------------------------------------

struct CountSummary {
    double mean = 0.0;
    double median = 0.0;
    std::size_t min = 0;
    std::size_t max = 0;
};

[[nodiscard]] inline CountSummary summarize(std::vector<std::size_t> v) {
    CountSummary s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    double total = 0.0;
    for (auto x : v) total += static_cast<double>(x);
    s.mean = total / static_cast<double>(v.size());
    const std::size_t mid = v.size() / 2;
    s.median = v.size() % 2 ? static_cast<double>(v[mid]) : 0.5 * static_cast<double>(v[mid - 1] + v[mid]);
    s.min = v.front();
    s.max = v.back();
    return s;
}

inline nlohmann::json to_json(const CountSummary& s) {
    return {{"mean", s.mean}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
}

[[nodiscard]] inline nlohmann::json dataset_statistics(const std::vector<EssayRecord>& records,
                                                       const std::vector<SegmentedDocument>& docs) {
    std::vector<std::size_t> sentences, words;
    for (const auto& d : docs) {
        sentences.push_back(d.sentences.size());
        words.push_back(d.word_count());
    }
    return {{"documents", records.size()},
            {"segmented", docs.size()},
            {"labels", to_json(label_distribution(records))},
            {"sentences_per_document", to_json(summarize(sentences))},
            {"words_per_document", to_json(summarize(words))}};
}

// ---------------------------------------------------------------------------
// Content-addressed cache
// ---------------------------------------------------------------------------

struct CacheEvent {
    std::string stage;
    std::string key;
    std::string status;  // "hit", "miss", "stale" or "off"
};

/// Artifacts live under `<root>/<stage>-<key>[.ext]` next to a
/// `<name>.meta.json` holding the artifact's content hash. A hash mismatch
/// marks the entry stale and the stage is recomputed.
class Cache {
public:
    Cache() = default;
    explicit Cache(std::filesystem::path root) : root_(std::move(root)) {}

    [[nodiscard]] bool enabled() const noexcept { return !root_.empty(); }
    [[nodiscard]] const std::vector<CacheEvent>& events() const noexcept { return events_; }

    [[nodiscard]] static std::string key(std::initializer_list<std::string_view> parts) {
        std::uint64_t h = fnv1a64("");
        for (auto p : parts) {
            h = fnv1a64(p, h);
            h = fnv1a64(std::string_view("\x1f", 1), h);
        }
        return hex64(h);
    }

    /// Returns the cached file bytes, or nullopt on a miss or stale entry.
    std::optional<std::string> load(const std::string& stage, const std::string& key, const std::string& ext) {
        if (!enabled()) {
            events_.push_back({stage, key, "off"});
            return std::nullopt;
        }
        const auto path = file(stage, key, ext);
        const auto meta = meta_path(path);
        if (!std::filesystem::exists(path) || !std::filesystem::exists(meta)) {
            events_.push_back({stage, key, "miss"});
            return std::nullopt;
        }
        std::string bytes = detail::read_file(path);
        std::string recorded;
        try {
            recorded = nlohmann::json::parse(detail::read_file(meta)).at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
        }
        if (recorded != hex64(fnv1a64(bytes))) {
            events_.push_back({stage, key, "stale"});
            return std::nullopt;
        }
        events_.push_back({stage, key, "hit"});
        return bytes;
    }

    void store(const std::string& stage, const std::string& key, const std::string& ext, const std::string& bytes) {
        if (!enabled()) return;
        std::filesystem::create_directories(root_);
        const auto path = file(stage, key, ext);
        bundle_format::write_text(path, bytes);
        bundle_format::write_text(meta_path(path), nlohmann::json{{"stage", stage}, {"key", key}, {"content", hex64(fnv1a64(bytes))}}.dump());
    }

    [[nodiscard]] std::filesystem::path file(const std::string& stage, const std::string& key, const std::string& ext) const {
        return root_ / (stage + "-" + key + ext);
    }

    [[nodiscard]] nlohmann::json log() const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& e : events_) j.push_back({{"stage", e.stage}, {"key", e.key}, {"status", e.status}});
        return j;
    }

private:
    static std::filesystem::path meta_path(const std::filesystem::path& p) { return p.string() + ".meta.json"; }

    std::filesystem::path root_;
    std::vector<CacheEvent> events_;
};

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace detail {

inline std::string segments_to_jsonl(const std::vector<SegmentedDocument>& docs) {
    std::string out;
    for (const auto& d : docs) out += to_json(d).dump() + "\n";
    return out;
}

inline std::vector<SegmentedDocument> segments_from_jsonl(const std::string& text) {
    std::vector<SegmentedDocument> docs;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start) docs.push_back(segmented_from_json(nlohmann::json::parse(text.substr(start, end - start))));
        start = end + 1;
    }
    return docs;
}

inline std::string corpus_fingerprint(const std::vector<EssayRecord>& records) {
    std::uint64_t h = fnv1a64("");
    for (const auto& r : records) {
        h = fnv1a64(r.id, h);
        h = fnv1a64(std::string_view("\x1f", 1), h);
        h = fnv1a64(r.text, h);
        h = fnv1a64(std::string_view("\x1e", 1), h);
    }
    return hex64(h);
}

inline std::string bundles_blob(const std::vector<EmbeddingBundle>& bundles) {
    std::string out;
    bundle_format::put_u32(out, static_cast<std::uint32_t>(bundles.size()));
    for (const auto& b : bundles) {
        const auto payload = bundle_format::encode(b);
        bundle_format::put_u32(out, static_cast<std::uint32_t>(b.doc_id.size()));
        out += b.doc_id;
        bundle_format::put_u32(out, static_cast<std::uint32_t>(payload.size()));
        out += payload;
    }
    return out;
}

inline std::vector<EmbeddingBundle> bundles_from_blob(const std::string& blob) {
    std::vector<EmbeddingBundle> out;
    std::size_t off = 0;
    auto u32 = [&] {
        if (off + 4 > blob.size()) throw CorruptionError("bundle cache truncated");
        const auto v = bundle_format::get_u32(blob, off);
        off += 4;
        return v;
    };
    const auto n = u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto id_len = u32();
        if (off + id_len > blob.size()) throw CorruptionError("bundle cache truncated");
        std::string id = blob.substr(off, id_len);
        off += id_len;
        const auto len = u32();
        if (off + len > blob.size()) throw CorruptionError("bundle cache truncated");
        auto b = bundle_format::decode(blob.substr(off, len));
        off += len;
        b.doc_id = std::move(id);
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace detail

/// Everything upstream of training for one corpus.
struct PreparedCorpus {
    std::vector<EssayRecord> records;  // segmentable records, input order
    std::vector<SkippedRecord> skipped;
    std::vector<SegmentedDocument> docs;
    std::vector<EmbeddingBundle> bundles;
    std::string bundles_key;
};

[[nodiscard]] inline std::vector<EssayRecord> ingest(const RunConfig& cfg) {
    return in_stage("ingest", [&] {
        if (cfg.corpus.empty()) throw ConfigError("no corpus path configured");
        if (!std::filesystem::exists(cfg.corpus)) throw ConfigError("corpus '" + cfg.corpus.string() + "' does not exist");
        return load_corpus(cfg.corpus, cfg.column_map);
    });
}

/// Segments and embeds `records`, consulting the cache for both stages.
[[nodiscard]] inline PreparedCorpus prepare(std::vector<EssayRecord> records, const RunConfig& cfg, Cache& cache) {
    PreparedCorpus p;
    const std::string seg_key = Cache::key({detail::corpus_fingerprint(records), "segmenter-v1"});
    in_stage("segment", [&] {
        if (auto hit = cache.load("segments", seg_key, ".jsonl")) {
            p.docs = detail::segments_from_jsonl(*hit);
        } else {
            auto res = segment_corpus(records);
            p.docs = std::move(res.documents);
            cache.store("segments", seg_key, ".jsonl", detail::segments_to_jsonl(p.docs));
        }
        std::map<std::string, std::size_t> kept;
        for (std::size_t i = 0; i < p.docs.size(); ++i) kept[p.docs[i].doc_id] = i;
        for (auto& r : records) {
            if (kept.count(r.id)) p.records.push_back(std::move(r));
            else p.skipped.push_back({r.id, "no sentences after preprocessing"});
        }
        if (p.docs.empty()) throw EmptyCorpusError("no document survived segmentation");
    });

    in_stage("embed", [&] {
        if (cfg.embedding == EmbeddingMode::Hash) {
            p.bundles_key = Cache::key({seg_key, "hash", std::to_string(cfg.dim), std::to_string(cfg.seed)});
            if (auto hit = cache.load("bundles", p.bundles_key, ".bin")) {
                p.bundles = detail::bundles_from_blob(*hit);
            } else {
                for (const auto& d : p.docs) p.bundles.push_back(hash_embed(d, cfg.dim, cfg.seed));
                cache.store("bundles", p.bundles_key, ".bin", detail::bundles_blob(p.bundles));
            }
        } else {
            if (cfg.bundles.empty()) throw ConfigError("import mode needs a bundles directory");
            if (!std::filesystem::exists(cfg.bundles / "manifest.json"))
                throw ConfigError("bundle directory '" + cfg.bundles.string() + "' has no manifest.json");
            p.bundles_key = Cache::key({seg_key, "import", detail::read_file(cfg.bundles / "manifest.json")});
            auto all = read_bundle_dir(cfg.bundles);
            std::map<std::string, std::size_t> by_id;
            for (std::size_t i = 0; i < all.size(); ++i) by_id[all[i].doc_id] = i;
            for (const auto& d : p.docs) {
                auto it = by_id.find(d.doc_id);
                if (it == by_id.end()) throw ValidationError("no bundle for document '" + d.doc_id + "'");
                p.bundles.push_back(std::move(all[it->second]));
            }
        }
        for (std::size_t i = 0; i < p.docs.size(); ++i)
            if (auto v = validate_bundle(p.bundles[i], p.docs[i]); !v.empty())
                throw ValidationError("bundle for '" + p.docs[i].doc_id + "': " + v.front().message);
    });
    return p;
}

/// Hierarchical graphs for every prepared document at one level.
[[nodiscard]] inline std::vector<HierGraph> build_graphs(const PreparedCorpus& p, LevelConfig level, Cache& cache) {
    return in_stage("graphs", [&] {
        const auto key = Cache::key({p.bundles_key, level_flag(level)});
        if (auto hit = cache.load("graphs", key, ".hphg")) return decode_graphs(*hit);
        std::vector<HierGraph> graphs;
        for (std::size_t i = 0; i < p.docs.size(); ++i) graphs.push_back(to_hiergraph(build_hypergraph(p.docs[i], p.bundles[i]), level));
        cache.store("graphs", key, ".hphg", encode_graphs(graphs));
        return graphs;
    });
}

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Split over `records`; indices refer to that order.
[[nodiscard]] inline SplitIndices split_records(const std::vector<EssayRecord>& records, const RunConfig& cfg) {
    return in_stage("split", [&] {
        const auto s = split_train_test(records, {cfg.train_fraction, cfg.seed, cfg.stratify});
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < records.size(); ++i) index[records[i].id] = i;
        SplitIndices out;
        for (const auto& r : s.train) out.train.push_back(index.at(r.id));
        for (const auto& r : s.test) out.test.push_back(index.at(r.id));
        return out;
    });
}

[[nodiscard]] inline SplitIndices split_prepared(const PreparedCorpus& p, const RunConfig& cfg) { return split_records(p.records, cfg); }

/// The labelled record of every graph, in graph order.
[[nodiscard]] inline std::vector<EssayRecord> records_for(const std::vector<HierGraph>& graphs, const std::vector<EssayRecord>& records) {
    std::map<std::string, const EssayRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    std::vector<EssayRecord> out;
    for (const auto& g : graphs) {
        auto it = by_id.find(g.doc_id);
        if (it == by_id.end()) throw ValidationError("graph '" + g.doc_id + "' has no labelled record in the corpus");
        out.push_back(*it->second);
    }
    return out;
}

struct TraitRun {
    Trait trait = Trait::Openness;
    ConfusionCounts counts;
    Scores scores;
    TrainHistory history;
    std::string checkpoint;  // encoded checkpoint bytes
};

namespace detail {

template <class T>
TraitRun train_and_score(const std::vector<HierGraph>& graphs, const std::vector<EssayRecord>& records, const SplitIndices& split,
                         Trait trait, const RunConfig& cfg) {
    std::vector<HierGraph> train_g, test_g;
    std::vector<T> train_y;
    std::vector<bool> test_y;
    for (auto i : split.train) {
        train_g.push_back(graphs[i]);
        train_y.push_back(records[i].labels.get(trait) ? T(1) : T(0));
    }
    for (auto i : split.test) {
        test_g.push_back(graphs[i]);
        test_y.push_back(records[i].labels.get(trait));
    }
    TrainConfig tc = cfg.train;
    tc.seed = cfg.trait_seed(trait);
    auto result = train_trait<T>(train_g, train_y, tc);
    std::vector<bool> preds;
    for (const auto& pr : predict_all(result.params, test_g)) preds.push_back(pr.label);
    TraitRun run;
    run.trait = trait;
    run.counts = confusion(preds, test_y);
    run.scores = score(run.counts);
    run.history = std::move(result.history);
    run.checkpoint = encode_checkpoint(result.params, {{"trait", std::string(1, trait_letter(trait))}, {"levels", level_flag(tc.level)}});
    return run;
}

}  // namespace detail

/// Trains and scores one trait on prebuilt graphs.
[[nodiscard]] inline TraitRun run_trait(const std::vector<HierGraph>& graphs, const std::vector<EssayRecord>& records,
                                        const SplitIndices& split, Trait trait, const RunConfig& cfg) {
    return in_stage("train", [&] {
        return cfg.precision == Precision::F64 ? detail::train_and_score<double>(graphs, records, split, trait, cfg)
                                               : detail::train_and_score<float>(graphs, records, split, trait, cfg);
    });
}

namespace detail {

template <class T>
ConfusionCounts score_with(const std::string& checkpoint, const std::vector<HierGraph>& graphs, const std::vector<EssayRecord>& records,
                           const std::vector<std::size_t>& rows, Trait trait) {
    const auto ck = decode_checkpoint<T>(checkpoint);
    std::vector<HierGraph> g;
    std::vector<bool> labels, preds;
    for (auto i : rows) {
        g.push_back(graphs[i]);
        labels.push_back(records[i].labels.get(trait));
    }
    for (const auto& p : predict_all(ck.params, g)) preds.push_back(p.label);
    return confusion(preds, labels);
}

}  // namespace detail

/// Confusion counts of a stored checkpoint over the given rows.
[[nodiscard]] inline ConfusionCounts score_checkpoint(const std::string& checkpoint, const std::vector<HierGraph>& graphs,
                                                      const std::vector<EssayRecord>& records, const std::vector<std::size_t>& rows,
                                                      Trait trait, Precision precision) {
    return in_stage("evaluate", [&] {
        return precision == Precision::F64 ? detail::score_with<double>(checkpoint, graphs, records, rows, trait)
                                           : detail::score_with<float>(checkpoint, graphs, records, rows, trait);
    });
}

[[nodiscard]] inline TraitReport report_of(const std::vector<TraitRun>& runs) {
    std::vector<TraitReport::Row> rows;
    for (const auto& r : runs)
        rows.push_back({r.trait, 100.0 * r.scores.accuracy, 100.0 * r.scores.f1, 100.0 * r.scores.precision, 100.0 * r.scores.recall});
    return TraitReport::from_percentages(std::move(rows));
}

struct RunResult {
    nlohmann::json report;  // deterministic for fixed config and inputs
    std::string markdown;
    std::vector<TraitRun> traits;
    nlohmann::json cache_log;
};

namespace detail {

inline void write_outputs(const RunConfig& cfg, const RunResult& r) {
    if (cfg.workdir.empty()) return;
    std::filesystem::create_directories(cfg.workdir / "checkpoints");
    std::filesystem::create_directories(cfg.workdir / "history");
    for (const auto& t : r.traits) {
        const std::string letter(1, trait_letter(t.trait));
        bundle_format::write_text(cfg.workdir / "checkpoints" / (letter + ".hpck"), t.checkpoint);
        bundle_format::write_text(cfg.workdir / "history" / (letter + ".jsonl"), t.history.to_jsonl());
    }
    bundle_format::write_text(cfg.workdir / "report.json", r.report.dump(2) + "\n");
    bundle_format::write_text(cfg.workdir / "report.md", r.markdown);
    bundle_format::write_text(cfg.workdir / "cache_log.json", r.cache_log.dump(2) + "\n");
}

inline Cache make_cache(const RunConfig& cfg) {
    return cfg.use_cache && !cfg.workdir.empty() ? Cache(cfg.workdir / "cache") : Cache();
}

}  // namespace detail

/// Pipeline over in-memory records (no ingest stage).
[[nodiscard]] inline RunResult run_records(std::vector<EssayRecord> records, const RunConfig& cfg) {
    in_stage("config", [&] { cfg.validate(); });
    Cache cache = detail::make_cache(cfg);
    const auto prepared = prepare(std::move(records), cfg, cache);
    const auto graphs = build_graphs(prepared, cfg.train.level, cache);
    const auto split = split_prepared(prepared, cfg);

    RunResult out;
    for (Trait t : cfg.traits) out.traits.push_back(run_trait(graphs, prepared.records, split, t, cfg));
    const auto table = report_of(out.traits);

    nlohmann::json per_trait = nlohmann::json::object();
    for (const auto& t : out.traits) {
        per_trait[std::string(1, trait_letter(t.trait))] = {
            {"tp", t.counts.tp},
            {"fp", t.counts.fp},
            {"fn", t.counts.fn},
            {"tn", t.counts.tn},
            {"accuracy", t.scores.accuracy},
            {"precision", t.scores.precision},
            {"recall", t.scores.recall},
            {"f1", t.scores.f1},
            {"final_train_loss", t.history.epochs.empty() ? 0.0 : t.history.epochs.back().train_loss}};
    }
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& s : prepared.skipped) skipped.push_back({{"doc_id", s.doc_id}, {"reason", s.reason}});
    auto config = cfg.to_json();
    config.erase("workdir");
    config.erase("use_cache");
    out.report = {{"config", config},
                  {"dataset", dataset_statistics(prepared.records, prepared.docs)},
                  {"skipped", skipped},
                  {"split", {{"train", split.train.size()}, {"test", split.test.size()}}},
                  {"traits", per_trait},
                  {"table", table.to_json()}};
    out.markdown = table.to_markdown();
    out.cache_log = cache.log();
    detail::write_outputs(cfg, out);
    return out;
}

/// ingest -> segment -> embed -> graphs -> train -> evaluate.
[[nodiscard]] inline RunResult run_pipeline(const RunConfig& cfg) { return run_records(ingest(cfg), cfg); }

// ---------------------------------------------------------------------------
// Ablation over representation levels
// ---------------------------------------------------------------------------

struct AblationRow {
    LevelConfig level = LevelConfig::Full;
    std::array<std::optional<double>, 5> accuracy{};  // percent, per trait
    double average = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;

    /// Mean over the traits that were run.
    static double mean_of(const AblationRow& r) {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& a : r.accuracy)
            if (a) {
                s += *a;
                ++n;
            }
        return n ? s / static_cast<double>(n) : 0.0;
    }

    [[nodiscard]] std::string to_markdown() const {
        std::string out = "| Text Level(s) | O | C | E | A | N | Avg. |\n|---|---|---|---|---|---|---|\n";
        for (const auto& r : rows) {
            out += "| " + std::string(level_title(r.level)) + " |";
            for (const auto& a : r.accuracy) out += " " + (a ? percent(*a, true) : std::string("-")) + " |";
            out += " " + percent(r.average, true) + " |\n";
        }
        return out;
    }

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json row = {{"levels", level_flag(r.level)}, {"title", level_title(r.level)}};
            for (Trait t : kAllTraits) {
                const auto& a = r.accuracy[static_cast<int>(t)];
                row[std::string(1, trait_letter(t))] = a ? nlohmann::json(std::round(*a * 100.0) / 100.0) : nlohmann::json(nullptr);
            }
            row["average"] = std::round(r.average * 100.0) / 100.0;
            j.push_back(std::move(row));
        }
        return j;
    }
};

/// Trains every selected trait at each of the five levels with a shared
/// split, embeddings and seeds.
[[nodiscard]] inline AblationReport run_ablation_records(std::vector<EssayRecord> records, const RunConfig& cfg,
                                                         std::span<const LevelConfig> levels = kAllLevels) {
    in_stage("config", [&] { cfg.validate(); });
    Cache cache = detail::make_cache(cfg);
    const auto prepared = prepare(std::move(records), cfg, cache);
    const auto split = split_prepared(prepared, cfg);
    AblationReport report;
    for (LevelConfig level : levels) {
        RunConfig lc = cfg;
        lc.train.level = level;
        const auto graphs = build_graphs(prepared, level, cache);
        AblationRow row;
        row.level = level;
        for (Trait t : cfg.traits) row.accuracy[static_cast<int>(t)] = 100.0 * run_trait(graphs, prepared.records, split, t, lc).scores.accuracy;
        row.average = AblationReport::mean_of(row);
        report.rows.push_back(row);
    }
    if (!cfg.workdir.empty()) {
        std::filesystem::create_directories(cfg.workdir);
        bundle_format::write_text(cfg.workdir / "ablation.json", report.to_json().dump(2) + "\n");
        bundle_format::write_text(cfg.workdir / "ablation.md", report.to_markdown());
    }
    return report;
}

[[nodiscard]] inline AblationReport run_ablation(const RunConfig& cfg) { return run_ablation_records(ingest(cfg), cfg); }

}  // namespace hyperpersona
