#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "segmenter.hpp"
#include "util.hpp"

namespace hyperpersona {

/// Per-unit feature vectors of one document. `word_vecs[j][k]` belongs to
/// word k of sentence j (both 0-based here).
struct EmbeddingBundle {
    std::string doc_id;
    std::uint32_t dim = 0;
    std::vector<float> doc_vec;
    std::vector<std::vector<float>> sent_vecs;
    std::vector<std::vector<std::vector<float>>> word_vecs;

    [[nodiscard]] std::size_t word_count() const noexcept {
        std::size_t n = 0;
        for (const auto& s : word_vecs) n += s.size();
        return n;
    }
};

struct ManifestEntry {
    std::string doc_id;
    std::string file;
    std::vector<std::uint32_t> word_counts;  // one per sentence
    std::string checksum;                   // "crc32:<8 hex digits>" of the .hpeb bytes
};

/// JSON sidecar describing one or more `.hpeb` payloads.
struct BundleManifest {
    static constexpr std::uint32_t kVersion = 1;
    std::uint32_t version = kVersion;
    std::uint32_t dim = 0;
    std::vector<ManifestEntry> documents;

    [[nodiscard]] nlohmann::json to_json() const {
        nlohmann::json docs = nlohmann::json::array();
        for (const auto& e : documents) {
            std::uint64_t words = 0;
            for (auto c : e.word_counts) words += c;
            docs.push_back({{"doc_id", e.doc_id},
                            {"file", e.file},
                            {"sentence_count", e.word_counts.size()},
                            {"word_counts", e.word_counts},
                            {"word_count", words},
                            {"checksum", e.checksum}});
        }
        return {{"version", version}, {"dim", dim}, {"doc_count", documents.size()}, {"documents", std::move(docs)}};
    }

    static BundleManifest from_json(const nlohmann::json& j) {
        BundleManifest m;
        try {
            m.version = j.at("version").get<std::uint32_t>();
            m.dim = j.at("dim").get<std::uint32_t>();
            for (const auto& d : j.at("documents"))
                m.documents.push_back({d.at("doc_id").get<std::string>(), d.at("file").get<std::string>(),
                                       d.at("word_counts").get<std::vector<std::uint32_t>>(),
                                       d.at("checksum").get<std::string>()});
            if (j.at("doc_count").get<std::size_t>() != m.documents.size())
                throw CorruptionError("manifest doc_count does not match its document list");
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("manifest: ") + e.what());
        }
        if (m.version != kVersion) throw FormatError("manifest: unsupported version " + std::to_string(m.version));
        return m;
    }

    [[nodiscard]] const ManifestEntry* find_file(const std::string& file) const {
        for (const auto& e : documents)
            if (e.file == file) return &e;
        return nullptr;
    }
};

namespace bundle_format {

inline constexpr std::array<char, 4> kMagic = {'H', 'P', 'E', 'B'};

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    put_u32(out, bits);
}

inline std::uint32_t get_u32(const std::string& in, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)])) << (8 * i);
    return v;
}

inline float get_f32(const std::string& in, std::size_t off) {
    const std::uint32_t bits = get_u32(in, off);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
}

[[nodiscard]] inline std::string checksum(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    static constexpr char digits[] = "0123456789abcdef";
    std::string hex(8, '0');
    for (int i = 7; i >= 0; --i) {
        hex[static_cast<std::size_t>(i)] = digits[crc & 0xF];
        crc >>= 4;
    }
    return "crc32:" + hex;
}

/// Payload: magic, u32 version, u32 dim, u32 sentence count, u32 word count per
/// sentence, then f32 doc vector, sentence vectors, word vectors (sentence-major).
/// All little-endian.
[[nodiscard]] inline std::string encode(const EmbeddingBundle& b) {
    std::string out(kMagic.begin(), kMagic.end());
    put_u32(out, BundleManifest::kVersion);
    put_u32(out, b.dim);
    put_u32(out, static_cast<std::uint32_t>(b.sent_vecs.size()));
    for (const auto& s : b.word_vecs) put_u32(out, static_cast<std::uint32_t>(s.size()));
    for (float f : b.doc_vec) put_f32(out, f);
    for (const auto& v : b.sent_vecs)
        for (float f : v) put_f32(out, f);
    for (const auto& s : b.word_vecs)
        for (const auto& v : s)
            for (float f : v) put_f32(out, f);
    return out;
}

[[nodiscard]] inline EmbeddingBundle decode(const std::string& in) {
    if (in.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), in.begin()))
        throw FormatError("bundle: bad magic");
    if (in.size() < 16) throw CorruptionError("bundle: truncated header");
    const auto version = get_u32(in, 4);
    if (version != BundleManifest::kVersion) throw FormatError("bundle: unsupported version " + std::to_string(version));
    EmbeddingBundle b;
    b.dim = get_u32(in, 8);
    const std::uint32_t sentences = get_u32(in, 12);
    if (b.dim == 0) throw CorruptionError("bundle: zero dimension");
    std::size_t off = 16;
    const auto need = [&](std::uint64_t bytes) {
        if (static_cast<std::uint64_t>(in.size()) < off + bytes) throw CorruptionError("bundle: truncated payload");
    };
    need(4ULL * sentences);
    std::vector<std::uint32_t> counts(sentences);
    std::uint64_t words = 0;
    for (auto& c : counts) {
        c = get_u32(in, off);
        off += 4;
        words += c;
    }
    need(4ULL * b.dim * (1ULL + sentences + words));
    auto vec = [&] {
        std::vector<float> v(b.dim);
        for (auto& f : v) {
            f = get_f32(in, off);
            off += 4;
        }
        return v;
    };
    b.doc_vec = vec();
    for (std::uint32_t j = 0; j < sentences; ++j) b.sent_vecs.push_back(vec());
    b.word_vecs.resize(sentences);
    for (std::uint32_t j = 0; j < sentences; ++j)
        for (std::uint32_t k = 0; k < counts[j]; ++k) b.word_vecs[j].push_back(vec());
    if (off != in.size()) throw CorruptionError("bundle: trailing bytes after payload");
    return b;
}

[[nodiscard]] inline std::filesystem::path sidecar_path(const std::filesystem::path& payload) {
    auto p = payload;
    p.replace_extension(".manifest.json");
    return p;
}

inline void write_text(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace bundle_format

[[nodiscard]] inline ManifestEntry manifest_entry(const EmbeddingBundle& b, const std::string& file,
                                                  const std::string& payload) {
    ManifestEntry e{b.doc_id, file, {}, bundle_format::checksum(payload)};
    for (const auto& s : b.word_vecs) e.word_counts.push_back(static_cast<std::uint32_t>(s.size()));
    return e;
}

/// Writes `path` (.hpeb) plus a single-document `<stem>.manifest.json`.
inline void write_bundle(const EmbeddingBundle& b, const std::filesystem::path& path) {
    const std::string payload = bundle_format::encode(b);
    bundle_format::write_text(path, payload);
    BundleManifest m;
    m.dim = b.dim;
    m.documents.push_back(manifest_entry(b, path.filename().string(), payload));
    bundle_format::write_text(bundle_format::sidecar_path(path), m.to_json().dump(2));
}

namespace detail {

inline EmbeddingBundle check_against_manifest(EmbeddingBundle b, const std::string& payload,
                                              const BundleManifest& m, const ManifestEntry& e) {
    if (bundle_format::checksum(payload) != e.checksum) throw CorruptionError("bundle '" + e.file + "': checksum mismatch");
    if (m.dim != b.dim) throw CorruptionError("bundle '" + e.file + "': dimension differs from manifest");
    if (e.word_counts.size() != b.word_vecs.size())
        throw CorruptionError("bundle '" + e.file + "': sentence count differs from manifest");
    for (std::size_t j = 0; j < b.word_vecs.size(); ++j)
        if (e.word_counts[j] != b.word_vecs[j].size())
            throw CorruptionError("bundle '" + e.file + "': word count of sentence " + std::to_string(j + 1) +
                                  " differs from manifest");
    b.doc_id = e.doc_id;
    return b;
}

}  // namespace detail

/// Reads a payload and checks it against its manifest: the `<stem>.manifest.json`
/// sidecar if present, otherwise `manifest.json` in the same directory.
[[nodiscard]] inline EmbeddingBundle read_bundle(const std::filesystem::path& path) {
    const std::string payload = detail::read_file(path);
    EmbeddingBundle b = bundle_format::decode(payload);

    std::optional<BundleManifest> manifest;
    if (auto side = bundle_format::sidecar_path(path); std::filesystem::exists(side)) {
        manifest = BundleManifest::from_json(nlohmann::json::parse(detail::read_file(side), nullptr, true));
    } else if (auto dir = path.parent_path() / "manifest.json"; std::filesystem::exists(dir)) {
        manifest = BundleManifest::from_json(nlohmann::json::parse(detail::read_file(dir)));
    }
    if (!manifest) throw FormatError("bundle '" + path.string() + "': no manifest found");
    const ManifestEntry* e = manifest->find_file(path.filename().string());
    if (!e) throw FormatError("bundle '" + path.string() + "': not listed in manifest");
    return detail::check_against_manifest(std::move(b), payload, *manifest, *e);
}

[[nodiscard]] inline std::string bundle_file_name(std::string_view doc_id, std::size_t ordinal) {
    std::string name;
    for (char c : doc_id) name.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
    if (name.empty()) name = "doc";
    return name + "." + std::to_string(ordinal) + ".hpeb";
}

/// Writes one payload per bundle into `dir` plus a directory `manifest.json`.
inline BundleManifest write_bundle_dir(const std::filesystem::path& dir, const std::vector<EmbeddingBundle>& bundles) {
    std::filesystem::create_directories(dir);
    BundleManifest m;
    m.dim = bundles.empty() ? 0 : bundles.front().dim;
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        const auto file = bundle_file_name(bundles[i].doc_id, i);
        const std::string payload = bundle_format::encode(bundles[i]);
        bundle_format::write_text(dir / file, payload);
        m.documents.push_back(manifest_entry(bundles[i], file, payload));
    }
    bundle_format::write_text(dir / "manifest.json", m.to_json().dump(2));
    return m;
}

/// Reads every bundle listed in `dir/manifest.json`, in manifest order.
[[nodiscard]] inline std::vector<EmbeddingBundle> read_bundle_dir(const std::filesystem::path& dir) {
    const auto mpath = dir / "manifest.json";
    if (!std::filesystem::exists(mpath)) throw FormatError("no manifest.json in '" + dir.string() + "'");
    const auto m = BundleManifest::from_json(nlohmann::json::parse(detail::read_file(mpath)));
    std::vector<EmbeddingBundle> out;
    for (const auto& e : m.documents) {
        const std::string payload = detail::read_file(dir / e.file);
        out.push_back(detail::check_against_manifest(bundle_format::decode(payload), payload, m, e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hash embedder: deterministic stand-in for pretrained-model embeddings.
// ---------------------------------------------------------------------------

/// Component c of a token's vector is draw c of RngStream(seed ^ fnv1a64(token)),
/// mapped to [-1, 1).
[[nodiscard]] inline std::vector<float> hash_token_vector(std::string_view token, std::uint32_t dim, std::uint64_t seed) {
    RngStream rng(seed ^ fnv1a64(token));
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(2.0 * rng.uniform() - 1.0);
    return v;
}

namespace detail {

inline std::vector<float> mean_of(const std::vector<std::vector<float>>& vs, std::uint32_t dim) {
    std::vector<double> acc(dim, 0.0);
    for (const auto& v : vs)
        for (std::uint32_t i = 0; i < dim; ++i) acc[i] += v[i];
    std::vector<float> out(dim);
    for (std::uint32_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(vs.size()));
    return out;
}

}  // namespace detail

/// Word vectors from `hash_token_vector`; sentence vector = mean of its words;
/// document vector = mean of its sentences.
[[nodiscard]] inline EmbeddingBundle hash_embed(const SegmentedDocument& doc, std::uint32_t dim, std::uint64_t seed) {
    if (dim < 2) throw ConfigError("hash_embed: dim must be at least 2");
    EmbeddingBundle b;
    b.doc_id = doc.doc_id;
    b.dim = dim;
    for (const auto& s : doc.sentences) {
        std::vector<std::vector<float>> words;
        for (const auto& w : s.words) words.push_back(hash_token_vector(w, dim, seed));
        b.sent_vecs.push_back(detail::mean_of(words, dim));
        b.word_vecs.push_back(std::move(words));
    }
    b.doc_vec = detail::mean_of(b.sent_vecs, dim);
    return b;
}

struct BundleViolation {
    enum class Kind { Identity, Count, Dimension, Finiteness };
    Kind kind;
    /// Unit coordinates: sentence/word are 1-based, 0 when not applicable.
    std::size_t sentence = 0;
    std::size_t word = 0;
    std::size_t component = 0;
    std::string message;
};

/// Every pairing problem between a bundle and its segmentation. Empty iff the
/// bundle is usable for that document.
[[nodiscard]] inline std::vector<BundleViolation> validate_bundle(const EmbeddingBundle& b, const SegmentedDocument& doc) {
    using K = BundleViolation::Kind;
    std::vector<BundleViolation> out;
    if (b.doc_id != doc.doc_id) out.push_back({K::Identity, 0, 0, 0, "doc_id '" + b.doc_id + "' != '" + doc.doc_id + "'"});
    if (b.dim == 0) out.push_back({K::Dimension, 0, 0, 0, "dimension is zero"});

    auto check_vec = [&](const std::vector<float>& v, std::size_t j, std::size_t k, const char* what) {
        if (v.size() != b.dim) {
            out.push_back({K::Dimension, j, k, 0,
                           std::string(what) + " has length " + std::to_string(v.size()) + ", expected " + std::to_string(b.dim)});
        }
        for (std::size_t c = 0; c < v.size(); ++c)
            if (!std::isfinite(v[c])) out.push_back({K::Finiteness, j, k, c, std::string(what) + " has a non-finite value"});
    };

    check_vec(b.doc_vec, 0, 0, "document vector");
    const std::size_t J = doc.sentences.size();
    if (b.sent_vecs.size() != J)
        out.push_back({K::Count, 0, 0, 0, "sentence vectors: " + std::to_string(b.sent_vecs.size()) + ", sentences: " + std::to_string(J)});
    if (b.word_vecs.size() != J)
        out.push_back({K::Count, 0, 0, 0, "word-vector groups: " + std::to_string(b.word_vecs.size()) + ", sentences: " + std::to_string(J)});
    for (std::size_t j = 0; j < b.sent_vecs.size(); ++j) check_vec(b.sent_vecs[j], j + 1, 0, "sentence vector");
    for (std::size_t j = 0; j < b.word_vecs.size(); ++j) {
        if (j < J && b.word_vecs[j].size() != doc.sentences[j].words.size())
            out.push_back({K::Count, j + 1, 0, 0,
                           "sentence " + std::to_string(j + 1) + " word vectors: " + std::to_string(b.word_vecs[j].size()) +
                               ", words: " + std::to_string(doc.sentences[j].words.size())});
        for (std::size_t k = 0; k < b.word_vecs[j].size(); ++k) check_vec(b.word_vecs[j][k], j + 1, k + 1, "word vector");
    }
    return out;
}

}  // namespace hyperpersona
