#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <hyperpersona/embedding.hpp>
#include <hyperpersona/segmenter.hpp>

using namespace hyperpersona;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Plain SplitMix64 and FNV-1a written out again, independent of util.hpp.
float reference_component(const std::string& token, std::uint64_t seed, std::uint64_t n) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : token) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t z = (seed ^ h) + (n + 1) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return static_cast<float>(2.0 * std::ldexp(static_cast<double>(z >> 11), -53) - 1.0);
}

EmbeddingBundle sample_bundle() {
    return hash_embed(segment("doc-1", "I am happy. It rains. Happy happy day!"), 8, 3);
}

}  // namespace

TEST_CASE("hash vectors match golden values") {
    const auto v = hash_token_vector("happy", 3, 0);
    CHECK(v[0] == 0.7734447717666626f);
    CHECK(v[1] == 0.6306375861167908f);
    CHECK(v[2] == 0.13834400475025177f);
    const auto w = hash_token_vector("happy", 3, 7);
    CHECK(w[0] == 0.9454679489135742f);
    const auto r = hash_token_vector("rains", 3, 0);
    CHECK(r[1] == -0.7810505628585815f);
}

TEST_CASE("hash vectors match an independent re-implementation") {
    for (const std::string tok : {"a", "happy", "caf\xC3\xA9", "well-known", "zzz"})
        for (std::uint64_t seed : {0ULL, 1ULL, 123456789ULL}) {
            const auto v = hash_token_vector(tok, 16, seed);
            for (std::uint64_t c = 0; c < 16; ++c) {
                CHECK(v[c] == reference_component(tok, seed, c));
                CHECK(v[c] >= -1.0f);
                CHECK(v[c] < 1.0f);
            }
        }
}

TEST_CASE("repeated words share a vector and means are exact") {
    const auto doc = segment("d", "Happy happy day. Sad night.");
    const auto b = hash_embed(doc, 32, 11);
    CHECK(b.word_vecs[0][0] == b.word_vecs[0][1]);
    CHECK(b.word_vecs[0][0] == hash_token_vector("happy", 32, 11));
    for (std::size_t c = 0; c < 32; ++c) {
        const double mean0 = (double(b.word_vecs[0][0][c]) + b.word_vecs[0][1][c] + b.word_vecs[0][2][c]) / 3.0;
        CHECK(std::abs(b.sent_vecs[0][c] - mean0) <= 1e-6);
        const double doc_mean = (double(b.sent_vecs[0][c]) + b.sent_vecs[1][c]) / 2.0;
        CHECK(std::abs(b.doc_vec[c] - doc_mean) <= 1e-6);
    }
    CHECK(validate_bundle(b, doc).empty());
}

TEST_CASE("hash_embed rejects tiny dimensions") {
    CHECK_THROWS_AS(hash_embed(segment("d", "x"), 1, 0), ConfigError);
    CHECK_NOTHROW(hash_embed(segment("d", "x"), 2, 0));
}

TEST_CASE("bundle payload round-trips bit-identically") {
    const auto dir = fresh_dir("hp_bundle_rt");
    auto b = sample_bundle();
    b.doc_vec[0] = -0.0f;
    b.doc_vec[1] = std::numeric_limits<float>::denorm_min();
    write_bundle(b, dir / "x.hpeb");
    CHECK(fs::exists(dir / "x.manifest.json"));
    const auto back = read_bundle(dir / "x.hpeb");
    CHECK(back.doc_id == b.doc_id);
    CHECK(back.dim == b.dim);
    CHECK(std::signbit(back.doc_vec[0]));
    CHECK(back.doc_vec == b.doc_vec);
    CHECK(back.sent_vecs == b.sent_vecs);
    CHECK(back.word_vecs == b.word_vecs);
    CHECK(bundle_format::encode(back) == bundle_format::encode(b));
}

TEST_CASE("manifest describes the payload") {
    const auto b = sample_bundle();
    const auto payload = bundle_format::encode(b);
    // 16-byte header, 3 counts, (1 + 3 + 8) vectors of 8 floats.
    CHECK(payload.size() == 16 + 4 * 3 + 4 * 8 * 12);
    const auto e = manifest_entry(b, "f.hpeb", payload);
    CHECK(e.word_counts == std::vector<std::uint32_t>{3, 2, 3});
    CHECK(e.checksum.rfind("crc32:", 0) == 0);
    CHECK(e.checksum.size() == 14);

    BundleManifest m;
    m.dim = 8;
    m.documents.push_back(e);
    const auto j = m.to_json();
    CHECK(j["doc_count"] == 1);
    CHECK(j["documents"][0]["word_count"] == 8);
    CHECK(j["documents"][0]["sentence_count"] == 3);
    const auto back = BundleManifest::from_json(j);
    CHECK(back.documents[0].checksum == e.checksum);
}

TEST_CASE("crc32 matches the standard check value") {
    CHECK(bundle_format::checksum("123456789") == "crc32:cbf43926");
}

TEST_CASE("bad magic is a format error") {
    auto payload = bundle_format::encode(sample_bundle());
    payload[0] = 'X';
    CHECK_THROWS_AS(bundle_format::decode(payload), FormatError);
}

TEST_CASE("truncated and padded payloads are corruption errors") {
    const auto payload = bundle_format::encode(sample_bundle());
    CHECK_THROWS_AS(bundle_format::decode(payload.substr(0, 10)), CorruptionError);
    CHECK_THROWS_AS(bundle_format::decode(payload.substr(0, payload.size() - 1)), CorruptionError);
    CHECK_THROWS_AS(bundle_format::decode(payload + "x"), CorruptionError);
}

TEST_CASE("manifest disagreements are corruption errors") {
    const auto dir = fresh_dir("hp_bundle_bad");
    const auto b = sample_bundle();
    write_bundle(b, dir / "x.hpeb");
    const auto good_manifest = slurp(dir / "x.manifest.json");

    SECTION("word count differs from the manifest") {
        auto j = nlohmann::json::parse(good_manifest);
        j["documents"][0]["word_counts"][1] = 5;
        dump(dir / "x.manifest.json", j.dump());
        // checksum is still right, so the count check is what fires
        CHECK_THROWS_WITH(read_bundle(dir / "x.hpeb"), Catch::Matchers::ContainsSubstring("word count of sentence 2"));
    }
    SECTION("flipped payload byte") {
        auto payload = slurp(dir / "x.hpeb");
        payload[payload.size() - 1] ^= 0x01;
        dump(dir / "x.hpeb", payload);
        CHECK_THROWS_AS(read_bundle(dir / "x.hpeb"), CorruptionError);
        CHECK_THROWS_WITH(read_bundle(dir / "x.hpeb"), Catch::Matchers::ContainsSubstring("checksum"));
    }
    SECTION("missing manifest") {
        fs::remove(dir / "x.manifest.json");
        CHECK_THROWS_AS(read_bundle(dir / "x.hpeb"), FormatError);
    }
}

TEST_CASE("bundle directory round-trips in manifest order") {
    const auto dir = fresh_dir("hp_bundle_dir");
    std::vector<EmbeddingBundle> bs = {sample_bundle(), hash_embed(segment("doc/2", "Other text."), 8, 3)};
    const auto m = write_bundle_dir(dir, bs);
    CHECK(m.documents[1].file == "doc_2.1.hpeb");
    const auto back = read_bundle_dir(dir);
    REQUIRE(back.size() == 2);
    CHECK(back[1].doc_id == "doc/2");
    CHECK(back[0].word_vecs == bs[0].word_vecs);
}

TEST_CASE("validate_bundle reports each problem once") {
    const auto doc = segment("doc-1", "I am happy. It rains. Happy happy day!");
    const auto good = hash_embed(doc, 8, 3);
    REQUIRE(validate_bundle(good, doc).empty());

    SECTION("NaN component") {
        auto b = good;
        b.word_vecs[1][0][4] = std::numeric_limits<float>::quiet_NaN();
        const auto v = validate_bundle(b, doc);
        REQUIRE(v.size() == 1);
        CHECK(v[0].kind == BundleViolation::Kind::Finiteness);
        CHECK(v[0].sentence == 2);
        CHECK(v[0].word == 1);
        CHECK(v[0].component == 4);
    }
    SECTION("missing sentence vector") {
        auto b = good;
        b.sent_vecs.pop_back();
        const auto v = validate_bundle(b, doc);
        REQUIRE(v.size() == 1);
        CHECK(v[0].kind == BundleViolation::Kind::Count);
    }
    SECTION("short word group") {
        auto b = good;
        b.word_vecs[2].pop_back();
        const auto v = validate_bundle(b, doc);
        REQUIRE(v.size() == 1);
        CHECK(v[0].kind == BundleViolation::Kind::Count);
        CHECK(v[0].sentence == 3);
    }
    SECTION("wrong length and wrong id") {
        auto b = good;
        b.doc_id = "other";
        b.sent_vecs[0].push_back(0.0f);
        const auto v = validate_bundle(b, doc);
        REQUIRE(v.size() == 2);
        CHECK(v[0].kind == BundleViolation::Kind::Identity);
        CHECK(v[1].kind == BundleViolation::Kind::Dimension);
    }
}
