#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <hyperpersona/hyperpersona.hpp>

namespace fs = std::filesystem;
using namespace hyperpersona;

namespace {

struct Globals {
    std::string workdir = "work";
    std::optional<std::string> config;
    std::vector<std::string> overrides;
};

RunConfig make_config(const Globals& g) {
    RunConfig cfg = in_stage("config", [&] {
        return load_run_config(g.config ? std::optional<fs::path>(*g.config) : std::nullopt, g.overrides);
    });
    if (cfg.workdir.empty()) cfg.workdir = g.workdir;
    in_stage("config", [&] { cfg.validate(); });
    return cfg;
}

fs::path in_workdir(const RunConfig& cfg, const std::string& given, const std::string& fallback) {
    if (!given.empty()) return given;
    fs::create_directories(cfg.workdir);
    return cfg.workdir / fallback;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    bundle_format::write_text(path, text);
}

std::vector<EssayRecord> load_input(RunConfig& cfg, const std::string& input) {
    if (!input.empty()) cfg.corpus = input;
    return ingest(cfg);
}

std::vector<HierGraph> load_graphs(const std::string& path) {
    return in_stage("graphs", [&] {
        if (!fs::exists(path)) throw ConfigError("graph file '" + path + "' does not exist");
        return read_graphs(path);
    });
}

std::vector<SegmentedDocument> load_segments(const std::string& path) {
    return in_stage("segment", [&] {
        if (!fs::exists(path)) throw ConfigError("segments file '" + path + "' does not exist");
        return read_segments(path);
    });
}

std::vector<EmbeddingBundle> bundles_for(const std::vector<SegmentedDocument>& docs, const std::string& dir) {
    return in_stage("embed", [&] {
        auto all = read_bundle_dir(dir);
        std::map<std::string, std::size_t> by_id;
        for (std::size_t i = 0; i < all.size(); ++i) by_id[all[i].doc_id] = i;
        std::vector<EmbeddingBundle> out;
        for (const auto& d : docs) {
            auto it = by_id.find(d.doc_id);
            if (it == by_id.end()) throw ValidationError("no bundle for document '" + d.doc_id + "'");
            out.push_back(all[it->second]);
        }
        return out;
    });
}

int cmd_synth(const Globals& g, std::size_t size, std::uint64_t seed, const std::string& out) {
    const auto cfg = make_config(g);
    SyntheticSpec spec;
    spec.size = size;
    spec.seed = seed;
    const auto records = in_stage("synth", [&] { return make_synthetic_corpus(spec); });
    const auto path = in_workdir(cfg, out, "synthetic.csv");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_corpus(path, records, cfg.column_map);
    std::cout << "wrote " << records.size() << " documents to " << path.string() << "\n";
    return 0;
}

int cmd_ingest(const Globals& g, const std::string& input, const std::string& column_map, const std::string& report) {
    auto cfg = make_config(g);
    if (!column_map.empty())
        cfg.column_map = in_stage("ingest", [&] { return ColumnMap::from_json(nlohmann::json::parse(detail::read_file(column_map))); });
    const auto records = load_input(cfg, input);
    const nlohmann::json j = {{"documents", records.size()}, {"labels", to_json(label_distribution(records))}};
    write_file(in_workdir(cfg, report, "ingest.json"), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_segment(const Globals& g, const std::string& input, const std::string& out) {
    auto cfg = make_config(g);
    const auto records = load_input(cfg, input);
    const auto res = in_stage("segment", [&] { return segment_corpus(records); });
    const auto path = in_workdir(cfg, out, "segments.jsonl");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_segments(path, res.documents);
    for (const auto& s : res.skipped) std::cerr << "skipped " << s.doc_id << ": " << s.reason << "\n";
    std::cout << "segmented " << res.documents.size() << " documents (" << res.skipped.size() << " skipped) into "
              << path.string() << "\n";
    return 0;
}

int cmd_embed(const Globals& g, const std::string& segments, const std::string& mode, std::optional<std::uint32_t> dim,
              std::optional<std::uint64_t> seed, const std::string& bundles, const std::string& out) {
    auto cfg = make_config(g);
    const auto docs = load_segments(segments.empty() ? (cfg.workdir / "segments.jsonl").string() : segments);
    if (mode == "hash") {
        const std::uint32_t d = dim.value_or(cfg.dim);
        const std::uint64_t s = seed.value_or(cfg.seed);
        const auto dir = in_workdir(cfg, out, "bundles");
        in_stage("embed", [&] {
            std::vector<EmbeddingBundle> bs;
            for (const auto& doc : docs) bs.push_back(hash_embed(doc, d, s));
            write_bundle_dir(dir, bs);
        });
        std::cout << "wrote " << docs.size() << " bundles (dim " << d << ") to " << dir.string() << "\n";
        return 0;
    }
    const auto dir = bundles.empty() ? cfg.bundles.string() : bundles;
    const auto bs = bundles_for(docs, dir);
    std::size_t bad = 0;
    for (std::size_t i = 0; i < docs.size(); ++i)
        for (const auto& v : validate_bundle(bs[i], docs[i])) {
            std::cerr << docs[i].doc_id << ": " << v.message << "\n";
            ++bad;
        }
    if (bad) throw StageError("embed", std::to_string(bad) + " bundle violations");
    std::cout << "validated " << bs.size() << " bundles in " << dir << "\n";
    return 0;
}

int cmd_graphs_build(const Globals& g, const std::string& segments, const std::string& bundles, const std::string& levels,
                     const std::string& out) {
    auto cfg = make_config(g);
    const auto level = in_stage("graphs", [&] { return levels.empty() ? cfg.train.level : parse_level(levels); });
    const auto docs = load_segments(segments.empty() ? (cfg.workdir / "segments.jsonl").string() : segments);
    const auto bs = bundles_for(docs, bundles.empty() ? (cfg.workdir / "bundles").string() : bundles);
    const auto path = in_workdir(cfg, out, "graphs-" + std::string(level_flag(level)) + ".hphg");
    const auto graphs = in_stage("graphs", [&] {
        std::vector<HierGraph> gs;
        for (std::size_t i = 0; i < docs.size(); ++i) gs.push_back(to_hiergraph(build_hypergraph(docs[i], bs[i]), level));
        return gs;
    });
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_graphs(path, graphs);
    std::cout << "wrote " << graphs.size() << " " << level_flag(level) << " graphs to " << path.string() << "\n";
    return 0;
}

int cmd_graphs_export(const Globals& g, const std::string& segments, const std::string& bundles, const std::string& doc,
                      bool features, const std::string& out) {
    auto cfg = make_config(g);
    const auto docs = load_segments(segments.empty() ? (cfg.workdir / "segments.jsonl").string() : segments);
    const auto bs = bundles_for(docs, bundles.empty() ? (cfg.workdir / "bundles").string() : bundles);
    const auto j = in_stage("graphs", [&] {
        for (std::size_t i = 0; i < docs.size(); ++i) {
            if (docs[i].doc_id != doc) continue;
            const auto hg = build_hypergraph(docs[i], bs[i]);
            const auto inc = incidence_matrix(hg);
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t r = 0; r < inc.rows; ++r) {
                nlohmann::json row = nlohmann::json::array();
                for (std::size_t c = 0; c < inc.cols; ++c) row.push_back(inc(r, c));
                rows.push_back(std::move(row));
            }
            auto out = to_json(hg, features);
            out["incidence"] = std::move(rows);
            return out;
        }
        throw ConfigError("no document '" + doc + "' in the segments file");
    });
    if (out.empty()) std::cout << j.dump(2) << "\n";
    else write_file(out, j.dump(2) + "\n");
    return 0;
}

struct Labelled {
    std::vector<HierGraph> graphs;
    std::vector<EssayRecord> records;
    SplitIndices split;
};

Labelled labelled(RunConfig& cfg, const std::string& input, const std::string& graphs_path) {
    Labelled l;
    const auto records = load_input(cfg, input);
    l.graphs = load_graphs(graphs_path.empty() ? (cfg.workdir / ("graphs-" + std::string(level_flag(cfg.train.level)) + ".hphg")).string()
                                               : graphs_path);
    l.records = in_stage("split", [&] { return records_for(l.graphs, records); });
    l.split = split_records(l.records, cfg);
    return l;
}

int cmd_train(const Globals& g, const std::string& input, const std::string& graphs, const std::string& trait_flag,
              const std::string& checkpoint, const std::string& history) {
    auto cfg = make_config(g);
    const Trait trait = in_stage("config", [&] { return parse_trait(trait_flag); });
    auto l = labelled(cfg, input, graphs);
    if (!l.graphs.empty()) cfg.train.level = l.graphs.front().level;
    const auto run = run_trait(l.graphs, l.records, l.split, trait, cfg);
    const std::string letter(1, trait_letter(trait));
    write_file(in_workdir(cfg, checkpoint, "checkpoints/" + letter + ".hpck"), run.checkpoint);
    write_file(in_workdir(cfg, history, "history/" + letter + ".jsonl"), run.history.to_jsonl());
    std::cout << trait_name(trait) << ": test accuracy " << percent(run.scores.accuracy) << "%, f1 " << percent(run.scores.f1)
              << "%\n";
    return 0;
}

int cmd_evaluate(const Globals& g, const std::string& input, const std::string& graphs, const std::string& checkpoints,
                 const std::string& out) {
    auto cfg = make_config(g);
    auto l = labelled(cfg, input, graphs);
    const fs::path dir = checkpoints.empty() ? cfg.workdir / "checkpoints" : fs::path(checkpoints);
    std::vector<TraitReport::Row> rows;
    for (Trait t : kAllTraits) {
        const auto path = dir / (std::string(1, trait_letter(t)) + ".hpck");
        if (!fs::exists(path)) continue;
        const auto counts = score_checkpoint(detail::read_file(path), l.graphs, l.records, l.split.test, t, cfg.precision);
        const auto s = score(counts);
        rows.push_back({t, 100.0 * s.accuracy, 100.0 * s.f1, 100.0 * s.precision, 100.0 * s.recall});
    }
    if (rows.empty()) throw StageError("evaluate", "no checkpoints found in '" + dir.string() + "'");
    const auto report = TraitReport::from_percentages(std::move(rows));
    const auto path = in_workdir(cfg, out, "report.md");
    write_file(path, path.extension() == ".json" ? report.to_json().dump(2) + "\n" : report.to_markdown());
    std::cout << report.to_markdown();
    return 0;
}

int cmd_run(const Globals& g, const std::string& input) {
    auto cfg = make_config(g);
    if (!input.empty()) cfg.corpus = input;
    const auto r = run_pipeline(cfg);
    std::cout << r.markdown;
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& input) {
    auto cfg = make_config(g);
    if (!input.empty()) cfg.corpus = input;
    std::cout << run_ablation(cfg).to_markdown();
    return 0;
}

int cmd_report(const Globals& g, const std::string& input, const std::string& from, const std::string& out) {
    auto cfg = make_config(g);
    if (!from.empty()) {
        const auto j = in_stage("report", [&] { return nlohmann::json::parse(detail::read_file(from)); });
        const auto table = in_stage("report", [&] {
            const auto& t = j.contains("table") ? j.at("table") : j;
            std::vector<TraitReport::Row> rows;
            for (Trait tr : kAllTraits) {
                const std::string k(1, trait_letter(tr));
                if (!t.contains(k)) continue;
                const auto& r = t.at(k);
                rows.push_back({tr, r.at("accuracy").get<double>(), r.at("f1").get<double>(), r.at("precision").get<double>(),
                                r.at("recall").get<double>()});
            }
            if (rows.empty()) throw FormatError("no trait rows in '" + from + "'");
            return TraitReport::from_percentages(std::move(rows));
        });
        if (out.empty()) std::cout << table.to_markdown();
        else write_file(out, table.to_markdown());
        return 0;
    }
    const auto records = load_input(cfg, input);
    const auto res = in_stage("segment", [&] { return segment_corpus(records); });
    const auto stats = dataset_statistics(records, res.documents);
    if (out.empty()) std::cout << stats.dump(2) << "\n";
    else write_file(out, stats.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Big Five trait prediction over hierarchical text graphs"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--workdir", g.workdir, "Directory for outputs and cache")->capture_default_str();
    app.add_option("--config", g.config, "JSON run configuration");
    app.add_option("--set", g.overrides, "Override a config key (key=value), repeatable")->take_all();

    std::string input, out, column_map, report_path, segments, bundles, mode = "hash", levels, doc, trait, checkpoint, history,
        checkpoints, graphs, from;
    std::optional<std::uint32_t> dim;
    std::optional<std::uint64_t> seed;
    std::size_t size = 200;
    std::uint64_t synth_seed = 0;
    bool features = false;

    auto* synth = app.add_subcommand("synth", "Write a planted-signal synthetic corpus");
    synth->add_option("--size", size)->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();
    synth->add_option("--out", out, "CSV path (default <workdir>/synthetic.csv)");

    auto* ing = app.add_subcommand("ingest", "Load and validate a corpus, report label distribution");
    ing->add_option("--input", input, "Corpus CSV");
    ing->add_option("--column-map", column_map, "JSON column mapping");
    ing->add_option("--report", report_path, "Output JSON (default <workdir>/ingest.json)");

    auto* seg = app.add_subcommand("segment", "Normalize and segment a corpus into sentences and words");
    seg->add_option("--input", input, "Corpus CSV");
    seg->add_option("--out", out, "Segments JSONL (default <workdir>/segments.jsonl)");

    auto* emb = app.add_subcommand("embed", "Hash-embed segments or validate imported bundles");
    emb->add_option("--segments", segments, "Segments JSONL");
    emb->add_option("--mode", mode)->check(CLI::IsMember({"hash", "import"}))->capture_default_str();
    emb->add_option("--dim", dim);
    emb->add_option("--seed", seed);
    emb->add_option("--bundles", bundles, "Bundle directory (import mode)");
    emb->add_option("--out", out, "Bundle directory (hash mode, default <workdir>/bundles)");

    auto* gr = app.add_subcommand("graphs", "Build hierarchical graphs or export a hypergraph");
    gr->require_subcommand(1);
    auto* gr_build = gr->add_subcommand("build", "Build graphs at one representation level");
    gr_build->add_option("--segments", segments);
    gr_build->add_option("--bundles", bundles);
    gr_build->add_option("--levels", levels, "full|doc-sent|doc-word|sent|word");
    gr_build->add_option("--out", out);
    auto* gr_export = gr->add_subcommand("export-hypergraph", "Print one document's hypergraph and incidence matrix");
    gr_export->add_option("--segments", segments);
    gr_export->add_option("--bundles", bundles);
    gr_export->add_option("--doc", doc)->required();
    gr_export->add_flag("--features", features, "Include feature vectors");
    gr_export->add_option("--out", out);

    auto* tr = app.add_subcommand("train", "Train one trait's classifier");
    tr->add_option("--input", input, "Corpus CSV (labels)");
    tr->add_option("--graphs", graphs, "Graph file from 'graphs build'");
    tr->add_option("--trait", trait, "O|C|E|A|N")->required();
    tr->add_option("--checkpoint", checkpoint);
    tr->add_option("--history", history);

    auto* ev = app.add_subcommand("evaluate", "Score checkpoints on the held-out split");
    ev->add_option("--input", input, "Corpus CSV (labels)");
    ev->add_option("--graphs", graphs);
    ev->add_option("--checkpoints", checkpoints);
    ev->add_option("--out", out, "report.json or report.md");

    auto* run = app.add_subcommand("run", "Run every stage end to end");
    run->add_option("--input", input, "Corpus CSV");

    auto* abl = app.add_subcommand("ablate", "Train and score all five representation levels");
    abl->add_option("--input", input, "Corpus CSV");

    auto* rep = app.add_subcommand("report", "Dataset statistics, or render a report JSON as markdown");
    rep->add_option("--input", input, "Corpus CSV");
    rep->add_option("--from", from, "report.json to render");
    rep->add_option("--out", out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(g, size, synth_seed, out);
        if (*ing) return cmd_ingest(g, input, column_map, report_path);
        if (*seg) return cmd_segment(g, input, out);
        if (*emb) return cmd_embed(g, segments, mode, dim, seed, bundles, out);
        if (*gr_build) return cmd_graphs_build(g, segments, bundles, levels, out);
        if (*gr_export) return cmd_graphs_export(g, segments, bundles, doc, features, out);
        if (*tr) return cmd_train(g, input, graphs, trait, checkpoint, history);
        if (*ev) return cmd_evaluate(g, input, graphs, checkpoints, out);
        if (*run) return cmd_run(g, input);
        if (*abl) return cmd_ablate(g, input);
        if (*rep) return cmd_report(g, input, from, out);
    } catch (const StageError& e) {
        std::cerr << "error " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error [" << app.get_subcommands().front()->get_name() << "] " << e.what() << "\n";
        return 1;
    }
    return 0;
}
